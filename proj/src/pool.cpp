// SPDX-License-Identifier: Apache-2.0
#include "gridmath/pool.hpp"

namespace gridmath {

PoolBuffer& PoolBuffer::operator=(PoolBuffer&& o) noexcept {
  if (this != &o) {
    release();
    pool_ = o.pool_;
    data_ = o.data_;
    size_ = o.size_;
    capacity_ = o.capacity_;
    o.pool_ = nullptr;
    o.data_ = nullptr;
    o.size_ = o.capacity_ = 0;
  }
  return *this;
}

PoolBuffer::~PoolBuffer() { release(); }

void PoolBuffer::release() {
  if (pool_ && data_) pool_->free(*this);
  pool_ = nullptr;
  data_ = nullptr;
  size_ = capacity_ = 0;
}

std::size_t PoolAllocator::sizeClass(std::size_t bytes) {
  std::size_t c = 256;
  while (c < bytes) c <<= 1;
  return c;
}

PoolBuffer PoolAllocator::alloc(std::size_t bytes) {
  if (bytes == 0) throw Error("pool: zero-byte allocation");
  const std::size_t cls = sizeClass(bytes);
  PoolBuffer buf;
  buf.pool_ = this;
  buf.size_ = bytes;
  buf.capacity_ = cls;
  auto& list = freeLists_[cls];
  if (!list.empty()) {
    buf.data_ = list.back().release();
    list.pop_back();
    stats_.reuses += 1;
    stats_.heldBytes -= cls;
  } else {
    buf.data_ = new std::uint8_t[cls];
    stats_.allocationsFromOS += 1;
  }
  return buf;
}

void PoolAllocator::free(PoolBuffer& buf) {
  if (buf.pool_ != this || !buf.data_) throw Error("pool: foreign or empty buffer");
  freeLists_[buf.capacity_].emplace_back(buf.data_);
  stats_.frees += 1;
  stats_.heldBytes += buf.capacity_;
  buf.pool_ = nullptr;
  buf.data_ = nullptr;
  buf.size_ = buf.capacity_ = 0;
}

}  // namespace gridmath
