// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <map>
#include <memory>
#include <vector>

#include "gridmath/common.hpp"

namespace gridmath {

struct PoolStats {
  std::uint64_t allocationsFromOS = 0;
  std::uint64_t reuses = 0;
  std::uint64_t frees = 0;
  std::uint64_t heldBytes = 0;  // bytes parked in free lists
};

class PoolAllocator;

// Owning handle for a pooled buffer; returns to its size-class free list on
// destruction. Buffers come back dirty by design — callers initialize.
class PoolBuffer {
 public:
  PoolBuffer() = default;
  PoolBuffer(PoolBuffer&& o) noexcept { *this = std::move(o); }
  PoolBuffer& operator=(PoolBuffer&& o) noexcept;
  PoolBuffer(const PoolBuffer&) = delete;
  PoolBuffer& operator=(const PoolBuffer&) = delete;
  ~PoolBuffer();

  std::uint8_t* data() { return data_; }
  const std::uint8_t* data() const { return data_; }
  std::size_t size() const { return size_; }          // requested size
  std::size_t capacity() const { return capacity_; }  // size-class size
  bool empty() const { return data_ == nullptr; }

  void release();  // return to pool now

 private:
  friend class PoolAllocator;
  PoolAllocator* pool_ = nullptr;
  std::uint8_t* data_ = nullptr;
  std::size_t size_ = 0;
  std::size_t capacity_ = 0;
};

// Size-class pooled allocator: power-of-two classes from 256 bytes up. A
// freed buffer goes back to its class list and is never returned to the OS
// for the lifetime of the pool.
class PoolAllocator {
 public:
  PoolAllocator() = default;
  PoolAllocator(const PoolAllocator&) = delete;

  PoolBuffer alloc(std::size_t bytes);
  void free(PoolBuffer& buf);

  PoolStats stats() const { return stats_; }

  static std::size_t sizeClass(std::size_t bytes);

 private:
  std::map<std::size_t, std::vector<std::unique_ptr<std::uint8_t[]>>> freeLists_;
  PoolStats stats_;
};

}  // namespace gridmath
