// SPDX-License-Identifier: Apache-2.0
#pragma once

#include <cstdint>
#include <string>
#include <vector>

#include "gridmath/session.hpp"

namespace gridmath {
namespace dnn {

// Dataset file format: u32 count, u32 featureDim, u32 classCount, Single
// features row-major, then u32 labels.
struct Dataset {
  std::uint32_t featureDim = 0;
  std::uint32_t classCount = 0;
  std::vector<float> features;  // count x featureDim
  std::vector<std::uint32_t> labels;

  std::size_t count() const { return labels.size(); }
};

// Gaussian class blobs; margin/noise control how separable the classes are.
Dataset makeBlobs(std::uint64_t seed, std::uint32_t count, std::uint32_t featureDim,
                  std::uint32_t classCount, double margin, double noise);
void saveDataset(const std::string& path, const Dataset& ds);
Dataset loadDataset(const std::string& path);

struct TrainOptions {
  double learningRate = 0.1;
  bool recordPipelines = true;  // replay the fused forward/backward by cached id
  Precision precision = Precision::Single;
  std::uint64_t seed = 1;
};

// Hybrid-parallel MLP: weights column-split across workers (model parallel),
// activations row-split over the batch (data parallel). Updated parameters
// are pushed to every worker asynchronously after each step; the next forward
// waits per layer, so later layers' pushes overlap earlier layers' compute.
class Trainer {
 public:
  Trainer(Session& session, std::vector<std::uint32_t> dims, TrainOptions opts);

  // One SGD step; returns the mean cross-entropy loss.
  double trainStep(const std::vector<float>& batch, const std::vector<std::uint32_t>& labels);

  // Forward + loss only (no gradients, no update).
  double forwardLoss(const std::vector<float>& batch, const std::vector<std::uint32_t>& labels);

  std::vector<std::uint32_t> predict(const std::vector<float>& batch);
  // Casts parameters to Half storage and runs the forward in mixed mode.
  std::vector<std::uint32_t> predictMixedHalf(const std::vector<float>& batch);

  // Central finite differences on a Double mirror of the parameters; returns
  // the max gradient error relative to max(1, |analytic|, |numeric|).
  double gradientCheck(const std::vector<float>& batch, const std::vector<std::uint32_t>& labels,
                       double epsilon);

  std::vector<std::vector<double>> gatherParameters();  // W0, b0, W1, b1, ...
  std::vector<std::vector<std::uint8_t>> gatherParametersRaw();

  std::size_t parameterCount() const;
  std::size_t layerCount() const { return dims_.size() - 1; }
  std::uint64_t forwardBackwardPipeline() const { return pipelineId_; }

 private:
  struct Layer {
    DistMatrix weights, bias;
    DistMatrix z, act;          // pre-activation, activation (batch rows)
    DistMatrix delta, dW, db;   // gradients
    DistMatrix rowScratch;      // unused row accumulator for addRowColSum
    ReplicationHandle hW, hB;
    bool replicated = false;
  };

  void ensureBatchMatrices(std::size_t rows);
  void uploadBatch(const std::vector<float>& batch, const std::vector<std::uint32_t>& labels);
  void forward(bool waitForParams);
  void backwardAndUpdate();
  void startParamReplication();
  double lossFromProbs();
  std::vector<std::uint32_t> argmaxLogits(std::size_t rows, DistMatrix logits);
  void computeGradsOnly(const std::vector<float>& batch, const std::vector<std::uint32_t>& labels);

  Session& s_;
  std::vector<std::uint32_t> dims_;
  TrainOptions opts_;
  std::vector<Layer> layers_;
  DistMatrix input_, labels_, probs_;
  std::size_t batchRows_ = 0;
  std::uint64_t pipelineId_ = 0;
  bool pipelineReady_ = false;
  std::uint64_t iteration_ = 0;
};

}  // namespace dnn
}  // namespace gridmath
