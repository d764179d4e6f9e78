#pragma once

#include <cstdint>
#include <vector>

namespace elliptic {

struct TrainConfig {
  int epochs = 2000;
  double lr = 0.01;
  int batch_size = 0;     // 0 means full batch
  int n_mc = 0;           // latent samples per point per step; 0 picks 1 for classification, 16 otherwise
  int kl_samples = 256;   // Monte-Carlo draws for the mixing KL
  bool early_stopping = true;
  int patience = 0;       // epochs without validation improvement before stopping; 0 never stops
  int val_xi = 16;        // posterior mixing quantiles used for validation NLL
};

struct TraceRow {
  int epoch = 0;
  double elbo = 0.0;     // training objective (log marginal likelihood for the exact GP)
  double val_nll = 0.0;  // NaN when no validation data is given
};

}  // namespace elliptic
