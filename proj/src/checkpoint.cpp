#include "filterlab/checkpoint.hpp"

#include <cstring>
#include <fstream>
#include <stdexcept>
#include <vector>

#include <json.hpp>

namespace filterlab {

namespace {

constexpr char kMagic[4] = {'F', 'L', 'T', 'B'};

void write_u32(std::ostream& out, uint32_t v) {
  out.write(reinterpret_cast<const char*>(&v), sizeof(v));
}

uint32_t read_u32(std::istream& in) {
  uint32_t v = 0;
  in.read(reinterpret_cast<char*>(&v), sizeof(v));
  return v;
}

void write_blob(const std::string& path, const nlohmann::json& header,
                const std::vector<TensorView>& tensors) {
  std::ofstream out(path, std::ios::binary);
  if (!out) throw std::runtime_error("cannot write checkpoint: " + path);
  out.write(kMagic, sizeof(kMagic));
  write_u32(out, kCheckpointFormatVersion);
  const std::string h = header.dump();
  write_u32(out, static_cast<uint32_t>(h.size()));
  out.write(h.data(), static_cast<std::streamsize>(h.size()));
  for (const auto& t : tensors)
    out.write(reinterpret_cast<const char*>(t.data),
              static_cast<std::streamsize>(t.size() * sizeof(double)));
  if (!out) throw std::runtime_error("write failed for checkpoint: " + path);
}

nlohmann::json read_header(std::istream& in, const std::string& path,
                           const std::string& expected_type) {
  char magic[4];
  in.read(magic, sizeof(magic));
  if (!in || std::memcmp(magic, kMagic, sizeof(kMagic)) != 0)
    throw std::runtime_error("not a filterlab checkpoint: " + path);
  const uint32_t version = read_u32(in);
  if (version != kCheckpointFormatVersion)
    throw std::runtime_error("unsupported checkpoint format version " +
                             std::to_string(version) + " in " + path);
  const uint32_t len = read_u32(in);
  std::string h(len, '\0');
  in.read(h.data(), len);
  if (!in) throw std::runtime_error("truncated checkpoint header: " + path);
  auto header = nlohmann::json::parse(h);
  if (header.at("type").get<std::string>() != expected_type)
    throw std::runtime_error("checkpoint " + path + " has type '" +
                             header.at("type").get<std::string>() + "', expected '" +
                             expected_type + "'");
  return header;
}

void read_tensors(std::istream& in, const std::string& path, const nlohmann::json& header,
                  const std::vector<TensorView>& tensors) {
  const auto& decl = header.at("tensors");
  if (decl.size() != tensors.size())
    throw std::runtime_error("checkpoint " + path + " declares " +
                             std::to_string(decl.size()) + " tensors, expected " +
                             std::to_string(tensors.size()));
  for (size_t i = 0; i < tensors.size(); ++i) {
    const auto& d = decl[i];
    if (d.at("name").get<std::string>() != tensors[i].name ||
        d.at("rows").get<long>() != tensors[i].rows ||
        d.at("cols").get<long>() != tensors[i].cols)
      throw std::runtime_error("checkpoint " + path + " tensor mismatch at '" +
                               tensors[i].name + "'");
    in.read(reinterpret_cast<char*>(tensors[i].data),
            static_cast<std::streamsize>(tensors[i].size() * sizeof(double)));
  }
  if (!in) throw std::runtime_error("truncated checkpoint payload: " + path);
}

nlohmann::json tensor_decl(const std::vector<TensorView>& tensors) {
  nlohmann::json decl = nlohmann::json::array();
  for (const auto& t : tensors)
    decl.push_back({{"name", t.name}, {"rows", t.rows}, {"cols", t.cols}});
  return decl;
}

}  // namespace

void save_model(const ModelParams& params, const std::string& path) {
  auto tensors = tensor_views(const_cast<ModelParams&>(params));
  nlohmann::json header;
  header["type"] = "model";
  header["config"] = {{"n_layers", params.config.n_layers},
                      {"d_model", params.config.d_model},
                      {"n_heads", params.config.n_heads},
                      {"d_mlp", params.config.d_mlp},
                      {"vocab_size", params.config.vocab_size},
                      {"max_seq_len", params.config.max_seq_len},
                      {"bos_id", params.config.bos_id},
                      {"eos_id", params.config.eos_id},
                      {"seed", params.config.seed}};
  header["tensors"] = tensor_decl(tensors);
  write_blob(path, header, tensors);
}

ModelParams load_model(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  const auto header = read_header(in, path, "model");
  const auto& c = header.at("config");
  ModelConfig config;
  config.n_layers = c.at("n_layers").get<int>();
  config.d_model = c.at("d_model").get<int>();
  config.n_heads = c.at("n_heads").get<int>();
  config.d_mlp = c.at("d_mlp").get<int>();
  config.vocab_size = c.at("vocab_size").get<int>();
  config.max_seq_len = c.at("max_seq_len").get<int>();
  config.bos_id = c.at("bos_id").get<int>();
  config.eos_id = c.at("eos_id").get<int>();
  config.seed = c.at("seed").get<uint64_t>();
  config.validate();

  // Allocate with the right shapes, then overwrite the payload in place.
  ModelParams params = zeros_like([&] {
    ModelParams shape;
    shape.config = config;
    shape.token_embedding.resize(config.vocab_size, config.d_model);
    shape.position_embedding.resize(config.max_seq_len, config.d_model);
    shape.blocks.resize(config.n_layers);
    for (auto& b : shape.blocks) {
      b.ln1_gamma.resize(config.d_model);
      b.ln1_beta.resize(config.d_model);
      b.w_query.resize(config.d_model, config.d_model);
      b.w_key.resize(config.d_model, config.d_model);
      b.w_value.resize(config.d_model, config.d_model);
      b.w_attn_out.resize(config.d_model, config.d_model);
      b.b_query.resize(config.d_model);
      b.b_key.resize(config.d_model);
      b.b_value.resize(config.d_model);
      b.b_attn_out.resize(config.d_model);
      b.ln2_gamma.resize(config.d_model);
      b.ln2_beta.resize(config.d_model);
      b.w_mlp_in.resize(config.d_model, config.d_mlp);
      b.b_mlp_in.resize(config.d_mlp);
      b.w_mlp_out.resize(config.d_mlp, config.d_model);
      b.b_mlp_out.resize(config.d_model);
    }
    shape.lnf_gamma.resize(config.d_model);
    shape.lnf_beta.resize(config.d_model);
    shape.unembed.resize(config.d_model, config.vocab_size);
    shape.unembed_bias.resize(config.vocab_size);
    return shape;
  }());
  auto tensors = tensor_views(params);
  read_tensors(in, path, header, tensors);
  return params;
}

void save_filter(const FilterSpec& spec, const FilterParams& filter, const std::string& path) {
  auto tensors = tensor_views(const_cast<FilterParams&>(filter));
  nlohmann::json header;
  header["type"] = "filter";
  header["spec"] = {{"layer", spec.location.layer},
                    {"hook", to_string(spec.location.hook)},
                    {"rank", spec.rank}};
  header["tensors"] = tensor_decl(tensors);
  write_blob(path, header, tensors);
}

std::pair<FilterSpec, FilterParams> load_filter(const std::string& path) {
  std::ifstream in(path, std::ios::binary);
  if (!in) throw std::runtime_error("cannot read checkpoint: " + path);
  const auto header = read_header(in, path, "filter");
  const auto& s = header.at("spec");
  FilterSpec spec;
  spec.location.layer = s.at("layer").get<int>();
  spec.location.hook = hook_point_from_string(s.at("hook").get<std::string>());
  spec.rank = s.at("rank").get<int>();

  const auto& decl = header.at("tensors");
  if (decl.size() != 4) throw std::runtime_error("filter checkpoint malformed: " + path);
  const long width = decl[0].at("cols").get<long>();
  FilterParams filter;
  filter.w_down.resize(spec.rank, width);
  filter.b_down.resize(spec.rank);
  filter.w_up.resize(width, spec.rank);
  filter.b_up.resize(width);
  auto tensors = tensor_views(filter);
  read_tensors(in, path, header, tensors);
  return {spec, filter};
}

}  // namespace filterlab
