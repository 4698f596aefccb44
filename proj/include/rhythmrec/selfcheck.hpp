#pragma once

// Finite-difference gradient verification suite over the three fusion
// variants in isolation and over the tiny end-to-end model. Backs the
// `selfcheck` CLI command and the acceptance tests.

#include <cstdint>
#include <string>
#include <vector>

#include "rhythmrec/gradcheck.hpp"
#include "rhythmrec/model.hpp"

namespace rhythmrec {

struct SelfCheckCase {
  std::string name;
  GradCheckResult result;
  double tolerance = 0.0;
};

struct SelfCheckReport {
  std::vector<SelfCheckCase> cases;
  bool all_ok() const {
    for (const auto& c : cases)
      if (!c.result.ok) return false;
    return !cases.empty();
  }
};

namespace detail {

// Isolated fusion op: loss = sum(C (*) M) with a fixed random C, checked
// against finite differences over both tables and all projection weights.
inline SelfCheckCase selfcheck_fusion_op(FusionKind kind, double tol) {
  constexpr std::size_t n = 6, d = 4, buckets = 5;
  const std::uint64_t seed = 2024;
  Rng rp = Rng::derive(seed, "check.pos");
  Rng rr = Rng::derive(seed, "check.rhythm");
  EmbeddingTable pos = EmbeddingTable::make(n, d, rp);
  EmbeddingTable rhythm = EmbeddingTable::make(buckets, d, rr);
  FusionParams fparams = FusionParams::make(kind, d, seed);
  const std::vector<std::int64_t> bucket_idx{0, 1, 2, 3, 4, 0};

  Rng rc = Rng::derive(seed, "check.weights");
  Tensor c = Tensor::zeros({n, d});
  for (double& v : c.values()) v = rc.normal();

  auto loss = [&, c]() {
    Tensor m = fuse(kind, embed_positions(pos, n), embed_rhythm(rhythm, bucket_idx), fparams);
    return sum(mul(m, c));
  };

  std::vector<std::pair<std::string, Tensor>> params;
  params.emplace_back("pos_table", pos.weights);
  params.emplace_back("rhythm_table", rhythm.weights);
  for (auto& nt : fparams.named()) params.push_back(nt);

  SelfCheckCase out;
  out.name = std::string("fusion-op=") + fusion_name(kind);
  out.tolerance = tol;
  out.result = gradcheck(params, loss, 1e-5, tol);
  return out;
}

// Tiny end-to-end model: d=8, one layer, one head, 4 positions, vocab 10,
// dropout 0; every parameter is checked.
inline SelfCheckCase selfcheck_end_to_end(FusionKind kind, double tol) {
  ModelConfig cfg;
  cfg.num_layers = 1;
  cfg.num_heads = 1;
  cfg.hidden_dim = 8;
  cfg.inner_dim = 16;
  cfg.dropout = 0.0;
  cfg.attention_dropout = 0.0;
  cfg.max_len = 4;
  cfg.fusion = kind;
  cfg.rhythm_norm = 1.0;
  cfg.rhythm_clip = 4;
  cfg.vocab_size = 10;

  ModelParams params = ModelParams::init(cfg, 7);

  Batch batch;
  batch.batch = 2;
  batch.seq_len = 4;
  batch.items = {0, 2, 3, 4, 5, 6, 5, 1};
  batch.buckets = {0, 0, 2, 1, 0, 3, 4, 0};
  batch.mask = {0, 1, 1, 1, 1, 1, 1, 1};
  batch.targets = {0, 3, 4, 5, 6, 5, 1, 2};
  batch.loss_mask = batch.mask;

  Rng rng(0);  // dropout disabled: never consulted
  auto loss = [&]() {
    Tensor logits = forward(params, cfg, batch, /*training=*/false, rng);
    return cross_entropy(logits, batch.targets, batch.loss_mask);
  };

  SelfCheckCase out;
  out.name = std::string("end-to-end fusion=") + fusion_name(kind);
  out.tolerance = tol;
  out.result = gradcheck(params.named(), loss, 1e-5, tol);
  return out;
}

}  // namespace detail

// `inject_adjoint_bug` corrupts the GELU adjoint for the duration of the
// suite, proving the checks can fail.
inline SelfCheckReport run_selfcheck(bool inject_adjoint_bug = false) {
  detail::corrupt_gelu_adjoint() = inject_adjoint_bug;
  SelfCheckReport report;
  for (FusionKind kind : {FusionKind::Basic, FusionKind::Mlp, FusionKind::Gated})
    report.cases.push_back(detail::selfcheck_fusion_op(kind, 1e-4));
  for (FusionKind kind :
       {FusionKind::None, FusionKind::Basic, FusionKind::Mlp, FusionKind::Gated})
    report.cases.push_back(detail::selfcheck_end_to_end(kind, 1e-3));
  detail::corrupt_gelu_adjoint() = false;
  return report;
}

}  // namespace rhythmrec
