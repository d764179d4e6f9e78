#include "elliptic/checkpoint.hpp"

#include <fstream>
#include <sstream>

#include <nlohmann/json.hpp>

#include "elliptic/errors.hpp"

namespace elliptic {
namespace {

using nlohmann::json;

json vec_to_json(const Eigen::VectorXd& v) { return std::vector<double>(v.data(), v.data() + v.size()); }

Eigen::VectorXd vec_from_json(const json& j) {
  const auto v = j.get<std::vector<double>>();
  return Eigen::Map<const Eigen::VectorXd>(v.data(), static_cast<Eigen::Index>(v.size()));
}

json mat_to_json(const Eigen::MatrixXd& m) {
  json rows = json::array();
  for (Eigen::Index i = 0; i < m.rows(); ++i) rows.push_back(vec_to_json(m.row(i).transpose()));
  return {{"rows", m.rows()}, {"cols", m.cols()}, {"data", rows}};
}

Eigen::MatrixXd mat_from_json(const json& j) {
  const auto r = j.at("rows").get<Eigen::Index>();
  const auto c = j.at("cols").get<Eigen::Index>();
  const json& data = j.at("data");
  if (static_cast<Eigen::Index>(data.size()) != r) throw ConfigError("checkpoint: matrix row count mismatch");
  Eigen::MatrixXd m(r, c);
  for (Eigen::Index i = 0; i < r; ++i) {
    const Eigen::VectorXd row = vec_from_json(data[static_cast<std::size_t>(i)]);
    if (row.size() != c) throw ConfigError("checkpoint: matrix column count mismatch");
    m.row(i) = row.transpose();
  }
  return m;
}

json kernel_to_json(const Kernel& k) {
  return std::visit(
      [](const auto& s) -> json {
        using T = std::decay_t<decltype(s)>;
        if constexpr (std::is_same_v<T, SEArd>) {
          return {{"type", "se"}, {"log_lengthscales", vec_to_json(s.log_lengthscales)},
                  {"log_variance", s.log_variance}};
        } else if constexpr (std::is_same_v<T, PeriodicKernel>) {
          return {{"type", "periodic"}, {"log_lengthscale", s.log_lengthscale}, {"log_period", s.log_period},
                  {"log_variance", s.log_variance}};
        } else if constexpr (std::is_same_v<T, LinearKernel>) {
          return {{"type", "linear"}, {"log_variance", s.log_variance}, {"offset", s.offset}};
        } else {
          json children = json::array();
          for (const auto& c : s.children) children.push_back(kernel_to_json(c));
          return {{"type", "sum"}, {"children", children}};
        }
      },
      k.spec);
}

Kernel kernel_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  Kernel k;
  if (type == "se") {
    k.spec = SEArd{vec_from_json(j.at("log_lengthscales")), j.at("log_variance").get<double>()};
  } else if (type == "periodic") {
    k.spec = PeriodicKernel{j.at("log_lengthscale").get<double>(), j.at("log_period").get<double>(),
                            j.at("log_variance").get<double>()};
  } else if (type == "linear") {
    k.spec = LinearKernel{j.at("log_variance").get<double>(), j.at("offset").get<double>()};
  } else if (type == "sum") {
    std::vector<Kernel> children;
    for (const auto& c : j.at("children")) children.push_back(kernel_from_json(c));
    k.spec = SumKernel{std::move(children)};
  } else {
    throw ConfigError("checkpoint: unknown kernel type '" + type + "'");
  }
  return k;
}

const char* squash_name(SquashKind k) {
  switch (k) {
    case SquashKind::Softplus:
      return "softplus";
    case SquashKind::ScaledSigmoid:
      return "sigmoid";
    case SquashKind::None:
      break;
  }
  return "none";
}

json flow_to_json(const SplineFlowParams& p) {
  return {{"bins", p.bins},
          {"tail_bound", p.tail_bound},
          {"squash", squash_name(p.squash.kind)},
          {"squash_max", p.squash.max},
          {"raw", vec_to_json(p.raw)}};
}

SplineFlowParams flow_from_json(const json& j) {
  SplineFlowParams p;
  p.bins = j.at("bins").get<int>();
  p.tail_bound = j.at("tail_bound").get<double>();
  const auto sq = j.at("squash").get<std::string>();
  const double max = j.at("squash_max").get<double>();
  if (sq == "softplus") {
    p.squash = Squash::softplus();
  } else if (sq == "sigmoid") {
    p.squash = Squash::scaled_sigmoid(max);
  } else if (sq == "none") {
    p.squash = Squash::none();
  } else {
    throw ConfigError("checkpoint: unknown squash '" + sq + "'");
  }
  p.raw = vec_from_json(j.at("raw"));
  return p;
}

json mixing_to_json(const MixingDistribution& m) {
  return std::visit(
      [](const auto& d) -> json {
        using T = std::decay_t<decltype(d)>;
        if constexpr (std::is_same_v<T, Dirac>) {
          return {{"type", "dirac"}, {"s", d.s}};
        } else if constexpr (std::is_same_v<T, ScaleInvChiSquare>) {
          return {{"type", "scale-inv-chi2"}, {"nu", d.nu}, {"tau2", d.tau2}};
        } else {
          return {{"type", "flow"}, {"flow", flow_to_json(d.flow)}};
        }
      },
      m);
}

MixingDistribution mixing_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "dirac") return Dirac{j.at("s").get<double>()};
  if (type == "scale-inv-chi2") return ScaleInvChiSquare{j.at("nu").get<double>(), j.at("tau2").get<double>()};
  if (type == "flow") return FlowMixing{flow_from_json(j.at("flow"))};
  throw ConfigError("checkpoint: unknown mixing type '" + type + "'");
}

json mlp_to_json(const MLPParams& net) {
  json layers = json::array();
  for (std::size_t l = 0; l < net.weights.size(); ++l) {
    layers.push_back({{"weights", mat_to_json(net.weights[l])}, {"biases", vec_to_json(net.biases[l])}});
  }
  return {{"activation", net.activation == Activation::Tanh ? "tanh" : "identity"}, {"layers", layers}};
}

MLPParams mlp_from_json(const json& j) {
  MLPParams net;
  const auto act = j.at("activation").get<std::string>();
  if (act == "tanh") {
    net.activation = Activation::Tanh;
  } else if (act == "identity") {
    net.activation = Activation::Identity;
  } else {
    throw ConfigError("checkpoint: unknown activation '" + act + "'");
  }
  for (const auto& layer : j.at("layers")) {
    net.weights.push_back(mat_from_json(layer.at("weights")));
    net.biases.push_back(vec_from_json(layer.at("biases")));
  }
  return net;
}

json likelihood_to_json(const Likelihood& lik) {
  return std::visit(
      [](const auto& l) -> json {
        using T = std::decay_t<decltype(l)>;
        if constexpr (std::is_same_v<T, GaussianLik>) {
          return {{"type", "gaussian"}, {"log_variance", l.log_variance}};
        } else if constexpr (std::is_same_v<T, EllipticalNoise>) {
          return {{"type", "elliptical"}, {"mixing", mixing_to_json(l.mixing)}};
        } else if constexpr (std::is_same_v<T, HeteroGaussian>) {
          return {{"type", "hetero-gaussian"}, {"net", mlp_to_json(l.net)}};
        } else if constexpr (std::is_same_v<T, HeteroElliptical>) {
          return {{"type", "hetero-elliptical"}, {"net", mlp_to_json(l.net)}, {"bins", l.bins},
                  {"tail_bound", l.tail_bound}};
        } else {
          return {{"type", "bernoulli"}};
        }
      },
      lik);
}

Likelihood likelihood_from_json(const json& j) {
  const auto type = j.at("type").get<std::string>();
  if (type == "gaussian") return GaussianLik{j.at("log_variance").get<double>()};
  if (type == "elliptical") return EllipticalNoise{mixing_from_json(j.at("mixing"))};
  if (type == "hetero-gaussian") return HeteroGaussian{mlp_from_json(j.at("net"))};
  if (type == "hetero-elliptical") {
    return HeteroElliptical{mlp_from_json(j.at("net")), j.at("bins").get<int>(), j.at("tail_bound").get<double>()};
  }
  if (type == "bernoulli") return BernoulliSigmoid{};
  throw ConfigError("checkpoint: unknown likelihood type '" + type + "'");
}

json jitter_to_json(const JitterSchedule& s) {
  return {{"try_zero", s.try_zero}, {"initial", s.initial}, {"max", s.max}, {"factor", s.factor}};
}

JitterSchedule jitter_from_json(const json& j) {
  return {j.at("try_zero").get<bool>(), j.at("initial").get<double>(), j.at("max").get<double>(),
          j.at("factor").get<double>()};
}

json spec_to_json(const ModelSpec& s) {
  return {{"kernel", kernel_to_json(s.kernel)},
          {"prior_mixing", mixing_to_json(s.prior_mixing)},
          {"likelihood", likelihood_to_json(s.likelihood)},
          {"inducing", mat_to_json(s.variational.Z)},
          {"m", vec_to_json(s.variational.m)},
          {"S_chol", mat_to_json(s.variational.S_chol)},
          {"posterior_mixing", mixing_to_json(s.variational.posterior_mixing)},
          {"train_inducing", s.train_inducing},
          {"train_prior_mixing", s.train_prior_mixing},
          {"trained", s.trained},
          {"jitter", jitter_to_json(s.jitter)}};
}

ModelSpec spec_from_json(const json& j) {
  ModelSpec s;
  s.kernel = kernel_from_json(j.at("kernel"));
  s.prior_mixing = mixing_from_json(j.at("prior_mixing"));
  s.likelihood = likelihood_from_json(j.at("likelihood"));
  s.variational.Z = mat_from_json(j.at("inducing"));
  s.variational.m = vec_from_json(j.at("m"));
  s.variational.S_chol = mat_from_json(j.at("S_chol"));
  s.variational.posterior_mixing = mixing_from_json(j.at("posterior_mixing"));
  s.train_inducing = j.at("train_inducing").get<bool>();
  s.train_prior_mixing = j.at("train_prior_mixing").get<bool>();
  s.trained = j.at("trained").get<bool>();
  s.jitter = jitter_from_json(j.at("jitter"));
  return s;
}

json stats_to_json(const Standardizer& s) {
  return {{"x_mean", vec_to_json(s.x_mean.transpose())},
          {"x_std", vec_to_json(s.x_std.transpose())},
          {"y_mean", s.y_mean},
          {"y_std", s.y_std},
          {"log_target", s.log_target}};
}

Standardizer stats_from_json(const json& j) {
  Standardizer s;
  s.x_mean = vec_from_json(j.at("x_mean")).transpose();
  s.x_std = vec_from_json(j.at("x_std")).transpose();
  s.y_mean = j.at("y_mean").get<double>();
  s.y_std = j.at("y_std").get<double>();
  s.log_target = j.at("log_target").get<bool>();
  return s;
}

}  // namespace

std::string serialize(const Checkpoint& ck) {
  json j;
  j["format_version"] = kCheckpointFormatVersion;
  j["model"] = ck.model_kind;
  j["classification"] = ck.classification;
  j["normalization"] = stats_to_json(ck.stats);
  j["config"] = json::parse(ck.config_json);
  if (ck.variational) j["variational"] = spec_to_json(*ck.variational);
  if (ck.exact) {
    j["exact"] = {{"kernel", kernel_to_json(ck.exact->kernel)},
                  {"log_noise", ck.exact->log_noise},
                  {"train_x", mat_to_json(ck.train_x)},
                  {"train_y", vec_to_json(ck.train_y)}};
  }
  return j.dump(2);
}

Checkpoint deserialize(const std::string& text) {
  try {
    const json j = json::parse(text);
    const int version = j.at("format_version").get<int>();
    if (version != kCheckpointFormatVersion) {
      throw ConfigError("checkpoint: unsupported format version " + std::to_string(version));
    }
    Checkpoint ck;
    ck.model_kind = j.at("model").get<std::string>();
    ck.classification = j.at("classification").get<bool>();
    ck.stats = stats_from_json(j.at("normalization"));
    ck.config_json = j.at("config").dump();
    if (j.contains("variational")) ck.variational = spec_from_json(j.at("variational"));
    if (j.contains("exact")) {
      const json& e = j.at("exact");
      ck.exact = ExactGP{kernel_from_json(e.at("kernel")), e.at("log_noise").get<double>()};
      ck.train_x = mat_from_json(e.at("train_x"));
      ck.train_y = vec_from_json(e.at("train_y"));
    }
    if (!ck.variational && !ck.exact) throw ConfigError("checkpoint: no model present");
    return ck;
  } catch (const json::exception& e) {
    throw ConfigError(std::string("checkpoint: malformed JSON: ") + e.what());
  }
}

std::string serialize_mixing(const MixingDistribution& mixing) { return mixing_to_json(mixing).dump(2); }

MixingDistribution deserialize_mixing(const std::string& text) {
  try {
    return mixing_from_json(json::parse(text));
  } catch (const json::exception& e) {
    throw ConfigError(std::string("mixing: malformed JSON: ") + e.what());
  }
}

void save_checkpoint(const std::filesystem::path& path, const Checkpoint& ck) {
  std::ofstream out(path);
  if (!out) throw ConfigError("cannot write checkpoint '" + path.string() + "'");
  out << serialize(ck) << '\n';
  if (!out) throw ConfigError("failed writing checkpoint '" + path.string() + "'");
}

Checkpoint load_checkpoint(const std::filesystem::path& path) {
  std::ifstream in(path);
  if (!in) throw ConfigError("cannot read checkpoint '" + path.string() + "'");
  std::ostringstream buf;
  buf << in.rdbuf();
  return deserialize(buf.str());
}

}  // namespace elliptic
