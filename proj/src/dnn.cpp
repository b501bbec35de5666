// SPDX-License-Identifier: Apache-2.0
#include "gridmath/dnn.hpp"

#include <algorithm>
#include <cmath>
#include <cstring>
#include <fstream>

namespace gridmath {
namespace dnn {

Dataset makeBlobs(std::uint64_t seed, std::uint32_t count, std::uint32_t featureDim,
                  std::uint32_t classCount, double margin, double noise) {
  Dataset ds;
  ds.featureDim = featureDim;
  ds.classCount = classCount;
  ds.features.resize(static_cast<std::size_t>(count) * featureDim);
  ds.labels.resize(count);

  std::vector<double> centers(static_cast<std::size_t>(classCount) * featureDim);
  SplitMix64 crng(avalanche64(seed ^ 0xC0FFEEull));
  for (double& c : centers) c = margin * (2.0 * crng.nextUnit() - 1.0);

  SplitMix64 nrng(avalanche64(seed ^ 0xB10B5ull));
  for (std::uint32_t i = 0; i < count; ++i) {
    const std::uint32_t label = i % classCount;
    ds.labels[i] = label;
    for (std::uint32_t j = 0; j < featureDim; ++j) {
      // Box-Muller
      const double u1 = std::max(1e-12, nrng.nextUnit());
      const double u2 = nrng.nextUnit();
      const double g = std::sqrt(-2.0 * std::log(u1)) * std::cos(2.0 * M_PI * u2);
      ds.features[static_cast<std::size_t>(i) * featureDim + j] =
          static_cast<float>(centers[static_cast<std::size_t>(label) * featureDim + j] +
                             noise * g);
    }
  }
  return ds;
}

void saveDataset(const std::string& path, const Dataset& ds) {
  WireWriter w;
  w.u32(static_cast<std::uint32_t>(ds.count()));
  w.u32(ds.featureDim);
  w.u32(ds.classCount);
  for (float f : ds.features) {
    std::uint32_t bits;
    std::memcpy(&bits, &f, 4);
    w.u32(bits);
  }
  for (std::uint32_t l : ds.labels) w.u32(l);
  std::ofstream out(path, std::ios::binary | std::ios::trunc);
  if (!out) throw Error("saveDataset: cannot open " + path);
  out.write(reinterpret_cast<const char*>(w.view().data()),
            static_cast<std::streamsize>(w.view().size()));
}

Dataset loadDataset(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw Error("loadDataset: cannot open " + path);
  std::vector<std::uint8_t> bytes((std::istreambuf_iterator<char>(in)),
                                  std::istreambuf_iterator<char>());
  WireReader r(bytes.data(), bytes.size());
  Dataset ds;
  const std::uint32_t count = r.u32();
  ds.featureDim = r.u32();
  ds.classCount = r.u32();
  ds.features.resize(static_cast<std::size_t>(count) * ds.featureDim);
  for (float& f : ds.features) {
    const std::uint32_t bits = r.u32();
    std::memcpy(&f, &bits, 4);
  }
  ds.labels.resize(count);
  for (std::uint32_t& l : ds.labels) l = r.u32();
  return ds;
}

Trainer::Trainer(Session& session, std::vector<std::uint32_t> dims, TrainOptions opts)
    : s_(session), dims_(std::move(dims)), opts_(opts) {
  if (dims_.size() < 2) throw Error("trainer: need at least one layer");
  const auto group = makeWorkerGroup(s_.workerCount());
  layers_.resize(dims_.size() - 1);
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::uint32_t fanIn = dims_[l];
    const std::uint32_t fanOut = dims_[l + 1];
    Layer& layer = layers_[l];
    layer.weights = s_.createMatrix(fanIn, fanOut, opts_.precision,
                                    makeColBlockLayout(fanIn, fanOut, group));
    layer.bias =
        s_.createMatrix(1, fanOut, opts_.precision, makeColBlockLayout(1, fanOut, group));

    // Seeded uniform init in (-1/sqrt(fanIn), 1/sqrt(fanIn)), generated on
    // the master so every worker count sees identical values.
    SplitMix64 rng(avalanche64(opts_.seed ^ (l + 1) * kSeedSalt));
    const double bound = 1.0 / std::sqrt(static_cast<double>(fanIn));
    std::vector<double> init(static_cast<std::size_t>(fanIn) * fanOut);
    for (double& v : init) v = bound * (2.0 * rng.nextUnit() - 1.0);
    s_.setData(layer.weights, init);
    // biases start at zero (createMatrix zero-fills)
  }
  startParamReplication();
}

void Trainer::ensureBatchMatrices(std::size_t rows) {
  if (batchRows_ == rows) return;
  if (batchRows_ != 0)
    throw Error("trainer: batch size is fixed after the first step");
  batchRows_ = rows;
  const auto group = makeWorkerGroup(s_.workerCount());
  input_ = s_.createMatrix(rows, dims_[0], opts_.precision,
                           makeRowBlockLayout(rows, dims_[0], group));
  labels_ =
      s_.createMatrix(rows, 1, Precision::Single, makeRowBlockLayout(rows, 1, group));
  probs_ = s_.createMatrix(rows, dims_.back(), opts_.precision,
                           makeRowBlockLayout(rows, dims_.back(), group));
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    const std::uint32_t out = dims_[l + 1];
    Layer& layer = layers_[l];
    layer.z = s_.createMatrix(rows, out, opts_.precision, makeRowBlockLayout(rows, out, group));
    layer.act =
        s_.createMatrix(rows, out, opts_.precision, makeRowBlockLayout(rows, out, group));
    layer.delta =
        s_.createMatrix(rows, out, opts_.precision, makeRowBlockLayout(rows, out, group));
    layer.dW = s_.createMatrix(dims_[l], out, opts_.precision,
                               makeColBlockLayout(dims_[l], out, group));
    layer.db = s_.createMatrix(1, out, opts_.precision, makeColBlockLayout(1, out, group));
    layer.rowScratch =
        s_.createMatrix(rows, 1, opts_.precision, makeRowBlockLayout(rows, 1, group));
  }
}

void Trainer::uploadBatch(const std::vector<float>& batch,
                          const std::vector<std::uint32_t>& labels) {
  const std::size_t rows = labels.size();
  if (batch.size() != rows * dims_[0]) throw Error("trainer: batch/label size mismatch");
  ensureBatchMatrices(rows);
  s_.setDataF32(input_, batch);
  std::vector<double> lab(rows);
  for (std::size_t i = 0; i < rows; ++i) lab[i] = static_cast<double>(labels[i]);
  s_.setData(labels_, lab);
}

void Trainer::forward(bool waitForParams) {
  DistMatrix cur = input_;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    Layer& layer = layers_[l];
    if (waitForParams && layer.replicated) {
      if (s_.wait(layer.hW) == ReplState::Failed || s_.wait(layer.hB) == ReplState::Failed)
        throw Error("trainer: parameter replication failed");
    }
    gemm(s_, cur, layer.weights, layer.z, 1.0, 0.0);
    biasAdd(s_, layer.z, layer.bias);
    if (l + 1 < layers_.size()) {
      relu(s_, layer.z, layer.act);
      cur = layer.act;
    } else {
      copyMatrix(s_, layer.z, probs_);
      softmaxRows(s_, probs_);
    }
  }
}

void Trainer::backwardAndUpdate() {
  const std::size_t last = layers_.size() - 1;
  copyMatrix(s_, probs_, layers_[last].delta);
  subtractOneHot(s_, layers_[last].delta, labels_);
  mulScalar(s_, layers_[last].delta, 1.0 / static_cast<double>(batchRows_));

  for (std::size_t l = layers_.size(); l-- > 0;) {
    Layer& layer = layers_[l];
    const DistMatrix inAct = (l == 0) ? input_ : layers_[l - 1].act;
    gemm(s_, inAct, layer.delta, layer.dW, 1.0, 0.0, /*transA=*/true);
    setConst(s_, layer.rowScratch, 0.0);
    setConst(s_, layer.db, 0.0);
    addRowColSum(s_, layer.delta, layer.rowScratch, layer.db, 1.0, s_.deterministic());
    if (l > 0) {
      gemm(s_, layer.delta, layer.weights, layers_[l - 1].delta, 1.0, 0.0, false,
           /*transB=*/true);
      reluGrad(s_, layers_[l - 1].z, layers_[l - 1].delta);
    }
    axpy(s_, -opts_.learningRate, layer.dW, layer.weights);
    axpy(s_, -opts_.learningRate, layer.db, layer.bias);
  }
}

void Trainer::startParamReplication() {
  // Forward-use order, so the first layer's parameters land first and later
  // layers' pushes overlap the next step's early compute.
  for (Layer& layer : layers_) {
    layer.hW = s_.replicateAsync(layer.weights);
    layer.hB = s_.replicateAsync(layer.bias);
    layer.replicated = true;
  }
}

double Trainer::lossFromProbs() { return logLossMean(s_, probs_, labels_); }

double Trainer::trainStep(const std::vector<float>& batch,
                          const std::vector<std::uint32_t>& labels) {
  uploadBatch(batch, labels);
  s_.phaseMark("step " + std::to_string(iteration_));
  if (opts_.recordPipelines) {
    if (!pipelineReady_) {
      pipelineId_ = s_.beginRecord();
      forward(/*waitForParams=*/true);
      backwardAndUpdate();
      startParamReplication();
      s_.endRecord();
      pipelineReady_ = true;
    } else {
      s_.replay(pipelineId_);
      for (Layer& layer : layers_) {
        layer.hW = ReplicationHandle{layer.weights.id(), s_.descriptor(layer.weights.id()).version};
        layer.hB = ReplicationHandle{layer.bias.id(), s_.descriptor(layer.bias.id()).version};
        layer.replicated = true;
      }
    }
  } else {
    forward(/*waitForParams=*/true);
    backwardAndUpdate();
    startParamReplication();
  }
  ++iteration_;
  return lossFromProbs();
}

double Trainer::forwardLoss(const std::vector<float>& batch,
                            const std::vector<std::uint32_t>& labels) {
  uploadBatch(batch, labels);
  forward(/*waitForParams=*/true);
  return lossFromProbs();
}

void Trainer::computeGradsOnly(const std::vector<float>& batch,
                               const std::vector<std::uint32_t>& labels) {
  uploadBatch(batch, labels);
  forward(/*waitForParams=*/true);
  const std::size_t last = layers_.size() - 1;
  copyMatrix(s_, probs_, layers_[last].delta);
  subtractOneHot(s_, layers_[last].delta, labels_);
  mulScalar(s_, layers_[last].delta, 1.0 / static_cast<double>(batchRows_));
  for (std::size_t l = layers_.size(); l-- > 0;) {
    Layer& layer = layers_[l];
    const DistMatrix inAct = (l == 0) ? input_ : layers_[l - 1].act;
    gemm(s_, inAct, layer.delta, layer.dW, 1.0, 0.0, /*transA=*/true);
    setConst(s_, layer.rowScratch, 0.0);
    setConst(s_, layer.db, 0.0);
    addRowColSum(s_, layer.delta, layer.rowScratch, layer.db, 1.0, s_.deterministic());
    if (l > 0) {
      gemm(s_, layer.delta, layer.weights, layers_[l - 1].delta, 1.0, 0.0, false,
           /*transB=*/true);
      reluGrad(s_, layers_[l - 1].z, layers_[l - 1].delta);
    }
  }
}

std::vector<std::uint32_t> Trainer::argmaxLogits(std::size_t rows, DistMatrix logits) {
  const auto vals = s_.getData(logits);
  const std::size_t classes = dims_.back();
  std::vector<std::uint32_t> out(rows);
  for (std::size_t i = 0; i < rows; ++i) {
    std::size_t best = 0;
    for (std::size_t c = 1; c < classes; ++c)
      if (vals[i * classes + c] > vals[i * classes + best]) best = c;
    out[i] = static_cast<std::uint32_t>(best);
  }
  return out;
}

namespace {
struct TempMatrices {
  Session& s;
  std::vector<DistMatrix> all;
  DistMatrix make(std::uint64_t rows, std::uint64_t cols, Precision p, const Layout& l) {
    all.push_back(s.createMatrix(rows, cols, p, l));
    return all.back();
  }
  ~TempMatrices() {
    for (auto it = all.rbegin(); it != all.rend(); ++it) {
      try {
        s.destroy(*it);
      } catch (...) {
      }
    }
  }
};
}  // namespace

std::vector<std::uint32_t> Trainer::predictMixedHalf(const std::vector<float>& batch) {
  if (batch.empty()) return {};
  const std::size_t rows = batch.size() / dims_[0];
  const auto group = makeWorkerGroup(s_.workerCount());
  TempMatrices tmp{s_, {}};
  std::vector<DistMatrix> halfW(layers_.size()), halfB(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    halfW[l] = tmp.make(dims_[l], dims_[l + 1], Precision::Half,
                        makeColBlockLayout(dims_[l], dims_[l + 1], group));
    halfB[l] =
        tmp.make(1, dims_[l + 1], Precision::Half, makeColBlockLayout(1, dims_[l + 1], group));
    castPrecision(s_, layers_[l].weights, halfW[l]);
    castPrecision(s_, layers_[l].bias, halfB[l]);
  }
  DistMatrix cur =
      tmp.make(rows, dims_[0], Precision::Single, makeRowBlockLayout(rows, dims_[0], group));
  s_.setDataF32(cur, batch);
  DistMatrix logits;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    DistMatrix z = tmp.make(rows, dims_[l + 1], Precision::Single,
                            makeRowBlockLayout(rows, dims_[l + 1], group));
    gemm(s_, cur, halfW[l], z, 1.0, 0.0);
    biasAdd(s_, z, halfB[l]);
    if (l + 1 < layers_.size()) {
      relu(s_, z, z);
      cur = z;
    } else {
      logits = z;
    }
  }
  return argmaxLogits(rows, logits);
}

std::vector<std::uint32_t> Trainer::predict(const std::vector<float>& batch) {
  if (batch.empty()) return {};
  const std::size_t rows = batch.size() / dims_[0];
  const auto group = makeWorkerGroup(s_.workerCount());
  TempMatrices tmp{s_, {}};
  DistMatrix cur =
      tmp.make(rows, dims_[0], opts_.precision, makeRowBlockLayout(rows, dims_[0], group));
  s_.setDataF32(cur, batch);
  DistMatrix logits;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    DistMatrix z = tmp.make(rows, dims_[l + 1], opts_.precision,
                            makeRowBlockLayout(rows, dims_[l + 1], group));
    gemm(s_, cur, layers_[l].weights, z, 1.0, 0.0);
    biasAdd(s_, z, layers_[l].bias);
    if (l + 1 < layers_.size()) {
      relu(s_, z, z);
      cur = z;
    } else {
      logits = z;
    }
  }
  return argmaxLogits(rows, logits);
}

std::vector<std::vector<double>> Trainer::gatherParameters() {
  std::vector<std::vector<double>> out;
  for (Layer& layer : layers_) {
    out.push_back(s_.getData(layer.weights));
    out.push_back(s_.getData(layer.bias));
  }
  return out;
}

std::vector<std::vector<std::uint8_t>> Trainer::gatherParametersRaw() {
  std::vector<std::vector<std::uint8_t>> out;
  for (Layer& layer : layers_) {
    out.push_back(s_.getDataRaw(layer.weights));
    out.push_back(s_.getDataRaw(layer.bias));
  }
  return out;
}

std::size_t Trainer::parameterCount() const {
  std::size_t n = 0;
  for (std::size_t l = 0; l < layers_.size(); ++l)
    n += static_cast<std::size_t>(dims_[l]) * dims_[l + 1] + dims_[l + 1];
  return n;
}

double Trainer::gradientCheck(const std::vector<float>& batch,
                              const std::vector<std::uint32_t>& labels, double epsilon) {
  if (parameterCount() > 500) throw Error("gradientCheck: network too large");
  computeGradsOnly(batch, labels);
  std::vector<std::vector<double>> analytic;
  for (Layer& layer : layers_) {
    analytic.push_back(s_.getData(layer.dW));
    analytic.push_back(s_.getData(layer.db));
  }

  // Double mirror of the parameters and a double forward path for the
  // finite-difference evaluations.
  const std::size_t rows = labels.size();
  const auto group = makeWorkerGroup(s_.workerCount());
  TempMatrices tmp{s_, {}};
  std::vector<DistMatrix> mw(layers_.size()), mb(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    mw[l] = tmp.make(dims_[l], dims_[l + 1], Precision::Double,
                     makeColBlockLayout(dims_[l], dims_[l + 1], group));
    mb[l] = tmp.make(1, dims_[l + 1], Precision::Double,
                     makeColBlockLayout(1, dims_[l + 1], group));
    castPrecision(s_, layers_[l].weights, mw[l]);
    castPrecision(s_, layers_[l].bias, mb[l]);
  }
  DistMatrix mx =
      tmp.make(rows, dims_[0], Precision::Double, makeRowBlockLayout(rows, dims_[0], group));
  s_.setDataF32(mx, batch);
  DistMatrix mlab =
      tmp.make(rows, 1, Precision::Double, makeRowBlockLayout(rows, 1, group));
  {
    std::vector<double> lab(rows);
    for (std::size_t i = 0; i < rows; ++i) lab[i] = labels[i];
    s_.setData(mlab, lab);
  }
  std::vector<DistMatrix> mz(layers_.size());
  for (std::size_t l = 0; l < layers_.size(); ++l)
    mz[l] = tmp.make(rows, dims_[l + 1], Precision::Double,
                     makeRowBlockLayout(rows, dims_[l + 1], group));
  DistMatrix mprobs = tmp.make(rows, dims_.back(), Precision::Double,
                               makeRowBlockLayout(rows, dims_.back(), group));

  auto lossAt = [&]() {
    DistMatrix cur = mx;
    for (std::size_t l = 0; l < layers_.size(); ++l) {
      gemm(s_, cur, mw[l], mz[l], 1.0, 0.0);
      biasAdd(s_, mz[l], mb[l]);
      if (l + 1 < layers_.size()) {
        relu(s_, mz[l], mz[l]);
        cur = mz[l];
      } else {
        copyMatrix(s_, mz[l], mprobs);
        softmaxRows(s_, mprobs);
      }
    }
    return logLossMean(s_, mprobs, mlab);
  };

  double worst = 0.0;
  for (std::size_t l = 0; l < layers_.size(); ++l) {
    for (int which = 0; which < 2; ++which) {
      DistMatrix m = which == 0 ? mw[l] : mb[l];
      const std::vector<double>& grads = analytic[2 * l + which];
      std::vector<double> vals = s_.getData(m);
      for (std::size_t idx = 0; idx < vals.size(); ++idx) {
        const double orig = vals[idx];
        vals[idx] = orig + epsilon;
        s_.setData(m, vals);
        const double lp = lossAt();
        vals[idx] = orig - epsilon;
        s_.setData(m, vals);
        const double lm = lossAt();
        vals[idx] = orig;
        s_.setData(m, vals);
        const double fd = (lp - lm) / (2.0 * epsilon);
        const double a = grads[idx];
        const double rel =
            std::abs(a - fd) / std::max({1.0, std::abs(a), std::abs(fd)});
        worst = std::max(worst, rel);
      }
    }
  }
  return worst;
}

}  // namespace dnn
}  // namespace gridmath
