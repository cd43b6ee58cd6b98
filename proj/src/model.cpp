#include "jembed/model.hpp"

#include <algorithm>
#include <fstream>

#include "json.hpp"
#include "jembed/error.hpp"
#include "jembed/mgt1.hpp"

namespace mg {

namespace {

Tensor copy_param(const Tensor& src) {
  if (!src.defined()) return Tensor();
  Tensor c = src.detach();
  c.set_requires_grad(src.requires_grad());
  return c;
}

}  // namespace

Model Model::init(const TrunkConfig& trunk, const GemConfig& gem, const MarginConfig& margin, std::size_t classes,
                  std::size_t train_resolution, Rng& rng) {
  gem.validate();
  Model m;
  m.trunk = Trunk::init(trunk, rng);
  m.gem = GemPooling(gem);
  m.head = ClassifierHead::init(classes, trunk.embedding_dim(), rng);
  m.margin = MarginState::make(trunk.embedding_dim(), margin.alpha, margin.beta0, margin.beta_lr, margin.tau);
  if (train_resolution < trunk.min_resolution()) throw ConfigError("model: training resolution below trunk minimum");
  m.train_resolution = train_resolution;
  return m;
}

Model Model::clone() const {
  Model m;
  m.trunk = trunk.clone();
  m.gem = GemPooling(gem.config());
  m.gem.set_p(gem.p_value());
  m.head = ClassifierHead{copy_param(head.weights)};
  m.margin = margin;
  m.margin.beta = copy_param(margin.beta);
  m.train_resolution = train_resolution;
  return m;
}

std::vector<Tensor> Model::tensors() const {
  std::vector<Tensor> out = trunk.parameters();
  out.push_back(head.weights);
  out.push_back(gem.p());
  out.push_back(margin.beta);
  return out;
}

void save_checkpoint(const Model& model, const std::filesystem::path& dir) {
  std::filesystem::create_directories(dir);
  using nlohmann::json;
  const TrunkConfig& tc = model.trunk.config();
  json files = json::array();
  auto put = [&](const std::string& name, const Tensor& t) {
    mgt1::write(dir / (name + ".mgt"), t);
    files.push_back(name + ".mgt");
  };
  for (std::size_t k = 0; k < model.trunk.layers().size(); ++k) {
    const ConvLayer& l = model.trunk.layers()[k];
    const std::string base = "conv" + std::to_string(k);
    put(base + ".weight", l.weight);
    put(base + ".bias", l.bias);
    if (tc.batch_norm) {
      put(base + ".bn_gamma", l.bn_gamma);
      put(base + ".bn_beta", l.bn_beta);
      put(base + ".running_mean", Tensor::vector(l.running_mean));
      put(base + ".running_var", Tensor::vector(l.running_var));
    }
  }
  put("head.weights", model.head.weights);
  const GemConfig& gc = model.gem.config();
  json manifest = {
      {"format", "jembed-checkpoint"},
      {"version", 1},
      {"trunk", {{"channels", tc.channels}, {"kernel", tc.kernel}, {"batch_norm", tc.batch_norm}}},
      {"gem", {{"p", model.gem.p_value()}, {"learnable", gc.learnable}, {"epsilon", gc.epsilon}}},
      {"margin",
       {{"alpha", model.margin.alpha},
        {"beta", model.margin.beta_value()},
        {"beta_lr", model.margin.beta_lr},
        {"tau", model.margin.tau},
        {"d_min", model.margin.d_min}}},
      {"classes", model.classes()},
      {"train_resolution", model.train_resolution},
      {"files", files},
  };
  if (gc.p_star) manifest["gem"]["p_star"] = *gc.p_star;
  std::ofstream out(dir / "manifest.json");
  if (!out) throw IoError("cannot write " + (dir / "manifest.json").string());
  out << manifest.dump(2) << '\n';
}

Model load_checkpoint(const std::filesystem::path& dir) {
  std::ifstream in(dir / "manifest.json");
  if (!in) throw IoError("not a checkpoint directory: " + dir.string());
  nlohmann::json j;
  try {
    in >> j;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest: " + std::string(e.what()));
  }
  if (j.value("format", "") != "jembed-checkpoint") throw IoError("checkpoint manifest: wrong format tag");
  try {
    TrunkConfig tc;
    tc.channels = j["trunk"]["channels"].get<std::vector<std::size_t>>();
    tc.kernel = j["trunk"]["kernel"].get<std::size_t>();
    tc.batch_norm = j["trunk"]["batch_norm"].get<bool>();
    GemConfig gc;
    gc.p = j["gem"]["p"].get<double>();
    gc.learnable = j["gem"]["learnable"].get<bool>();
    gc.epsilon = j["gem"]["epsilon"].get<double>();
    if (j["gem"].contains("p_star")) gc.p_star = j["gem"]["p_star"].get<double>();
    MarginConfig mc;
    mc.alpha = j["margin"]["alpha"].get<double>();
    mc.beta0 = j["margin"]["beta"].get<double>();
    mc.beta_lr = j["margin"]["beta_lr"].get<double>();
    mc.tau = j["margin"]["tau"].get<double>();
    Rng unused(0);
    Model m = Model::init(tc, gc, mc, j["classes"].get<std::size_t>(), j["train_resolution"].get<std::size_t>(), unused);
    m.margin.d_min = j["margin"]["d_min"].get<double>();
    auto load_into = [&](const std::string& name, Tensor& dst) {
      const Tensor t = mgt1::read(dir / (name + ".mgt"));
      if (t.shape() != dst.shape()) {
        throw IoError("checkpoint: " + name + " has shape " + shape_str(t.shape()) + ", expected " +
                      shape_str(dst.shape()));
      }
      std::copy(t.data().begin(), t.data().end(), dst.mutable_data().begin());
    };
    for (std::size_t k = 0; k < m.trunk.layers().size(); ++k) {
      ConvLayer& l = m.trunk.layers()[k];
      const std::string base = "conv" + std::to_string(k);
      load_into(base + ".weight", l.weight);
      load_into(base + ".bias", l.bias);
      if (tc.batch_norm) {
        load_into(base + ".bn_gamma", l.bn_gamma);
        load_into(base + ".bn_beta", l.bn_beta);
        Tensor rm = Tensor::vector(l.running_mean), rv = Tensor::vector(l.running_var);
        load_into(base + ".running_mean", rm);
        load_into(base + ".running_var", rv);
        l.running_mean.assign(rm.data().begin(), rm.data().end());
        l.running_var.assign(rv.data().begin(), rv.data().end());
      }
    }
    load_into("head.weights", m.head.weights);
    return m;
  } catch (const nlohmann::json::exception& e) {
    throw IoError("checkpoint manifest: " + std::string(e.what()));
  }
}

Tensor activation_maps(const Model& model, const Tensor& input) {
  NoGradGuard no_grad;
  return model.trunk.infer(input);
}

namespace {

double eval_exponent(const Model& model, std::optional<double> p_star) {
  return p_star.value_or(model.gem.config().p_star.value_or(model.gem.p_value()));
}

}  // namespace

Tensor embed_input(const Model& model, const Tensor& input, std::optional<double> p_star) {
  NoGradGuard no_grad;
  return gem(model.trunk.infer(input), Tensor::scalar(eval_exponent(model, p_star)), model.gem.config().epsilon);
}

Tensor embed_images(const Model& model, const std::vector<const Tensor*>& images, std::size_t resolution,
                    std::optional<double> p_star, std::size_t chunk) {
  if (images.empty()) throw PreconditionError("embed: no images");
  if (resolution < model.trunk.config().min_resolution()) {
    throw PreconditionError("embed: resolution " + std::to_string(resolution) + " below the trunk minimum " +
                            std::to_string(model.trunk.config().min_resolution()));
  }
  NoGradGuard no_grad;
  const Tensor p_tensor = Tensor::scalar(eval_exponent(model, p_star));
  const std::size_t d = model.dim();
  std::vector<double> out;
  out.reserve(images.size() * d);
  for (std::size_t start = 0; start < images.size(); start += chunk) {
    const std::size_t end = std::min(images.size(), start + chunk);
    std::vector<Tensor> prepared;
    prepared.reserve(end - start);
    for (std::size_t i = start; i < end; ++i)
      prepared.push_back(prepare_eval_image(*images[i], resolution, model.train_resolution));
    // Non-square sources give mixed shapes above the base resolution.
    const bool uniform = std::all_of(prepared.begin(), prepared.end(),
                                     [&](const Tensor& t) { return t.shape() == prepared.front().shape(); });
    if (uniform) {
      const Tensor e = gem(model.trunk.infer(to_network_input(prepared)), p_tensor, model.gem.config().epsilon);
      out.insert(out.end(), e.data().begin(), e.data().end());
    } else {
      for (const Tensor& t : prepared) {
        const Tensor e = gem(model.trunk.infer(to_network_input({t})), p_tensor, model.gem.config().epsilon);
        out.insert(out.end(), e.data().begin(), e.data().end());
      }
    }
  }
  return Tensor({images.size(), d}, std::move(out));
}

Tensor embed_records(const Model& model, const std::vector<ImageRecord>& records, std::size_t resolution,
                     std::optional<double> p_star) {
  std::vector<const Tensor*> images;
  images.reserve(records.size());
  for (const ImageRecord& r : records) images.push_back(&r.pixels);
  return embed_images(model, images, resolution, p_star);
}

std::vector<int> predict(const ClassifierHead& head, const Tensor& emb) {
  NoGradGuard no_grad;
  const Tensor logits = classifier_logits(emb, head);
  const std::size_t n = logits.dim(0), k = logits.dim(1);
  std::vector<int> out(n);
  for (std::size_t i = 0; i < n; ++i) {
    const auto row = logits.data().subspan(i * k, k);
    out[i] = static_cast<int>(std::max_element(row.begin(), row.end()) - row.begin());
  }
  return out;
}

double top1_accuracy(const ClassifierHead& head, const Tensor& emb, const std::vector<ImageRecord>& records) {
  const std::vector<int> pred = predict(head, emb);
  if (pred.size() != records.size()) throw ShapeError("accuracy: embedding count does not match records");
  std::size_t correct = 0;
  for (std::size_t i = 0; i < pred.size(); ++i) correct += pred[i] == records[i].label;
  return static_cast<double>(correct) / static_cast<double>(pred.size());
}

}  // namespace mg
