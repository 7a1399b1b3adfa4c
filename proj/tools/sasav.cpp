#include <csignal>
#include <fstream>
#include <iostream>
#include <sstream>

#include <CLI11.hpp>

#include "sasav/config.hpp"
#include "sasav/error.hpp"
#include "sasav/knowledge.hpp"
#include "sasav/pipeline.hpp"
#include "sasav/server.hpp"
#include "sasav/synthetic.hpp"

namespace {

constexpr int kExitOk = 0;
constexpr int kExitAbort = 1;
constexpr int kExitUsage = 64;
constexpr int kExitBadArtifacts = 66;

struct UsageError : std::runtime_error {
  using std::runtime_error::runtime_error;
};

nlohmann::json parse_json_arg(const std::string& text, const std::string& what) {
  std::string body = text;
  if (!text.empty() && text.front() == '@') {
    std::ifstream in(text.substr(1));
    if (!in) throw UsageError("cannot read " + text.substr(1));
    std::stringstream ss;
    ss << in.rdbuf();
    body = ss.str();
  }
  auto doc = nlohmann::json::parse(body, nullptr, false);
  if (doc.is_discarded()) throw UsageError(what + " is not valid JSON");
  return doc;
}

// Flag values that were given on the command line, as a config document.
struct ConfigFlags {
  std::optional<int> n_rsv, m_isovalues, k_viewpoints, intermediate_resolution, output_resolution, downsample_target,
      samples_per_segment, confidence_threshold, render_threads, max_concurrency;
  std::optional<double> temperature;
  std::optional<std::string> provider, fixtures, endpoint, model, kb, web_adapter;
  bool animate = false;
  std::vector<std::string> sets;

  void add(CLI::App* app) {
    app->add_option("--n-rsv", n_rsv, "Number of ramp starting values");
    app->add_option("--m-isovalues", m_isovalues, "Number of sampled isovalues");
    app->add_option("--k-viewpoints", k_viewpoints, "Number of candidate viewpoints");
    app->add_option("--intermediate-resolution", intermediate_resolution, "Resolution of renders sent to the model");
    app->add_option("--output-resolution", output_resolution, "Resolution of final.png");
    app->add_option("--downsample-target", downsample_target, "Maximum voxels per axis after downsampling");
    app->add_option("--samples-per-segment", samples_per_segment, "Trajectory poses per anchor segment");
    app->add_option("--confidence-threshold", confidence_threshold, "Reject isovalues below this confidence");
    app->add_option("--temperature", temperature, "Sampling temperature for every role");
    app->add_option("--threads", render_threads, "Render threads (0 = all cores)");
    app->add_option("--provider", provider, "remote_http or scripted_mock");
    app->add_option("--fixtures", fixtures, "Fixture directory for the scripted mock");
    app->add_option("--endpoint", endpoint, "OpenAI-compatible API base URL");
    app->add_option("--model", model, "Chat model name");
    app->add_option("--max-concurrency", max_concurrency, "Maximum concurrent model requests");
    app->add_option("--kb", kb, "Knowledge base directory built by 'kb build'");
    app->add_option("--web-adapter", web_adapter, "canned:<file>, unavailable, or a search endpoint URL");
    app->add_flag("--animate", animate, "Render trajectory frames");
    app->add_option("--set", sets, "Extra config override key=<json value>");
  }

  nlohmann::json to_json() const {
    nlohmann::json doc = nlohmann::json::object();
    const auto put = [&](const char* key, const auto& v) {
      if (v) doc[key] = *v;
    };
    put("n_rsv", n_rsv);
    put("m_isovalues", m_isovalues);
    put("k_viewpoints", k_viewpoints);
    put("intermediate_resolution", intermediate_resolution);
    put("output_resolution", output_resolution);
    put("downsample_target", downsample_target);
    put("samples_per_segment", samples_per_segment);
    put("confidence_threshold", confidence_threshold);
    put("render_threads", render_threads);
    put("temperature", temperature);
    put("kb_path", kb);
    put("web_adapter", web_adapter);
    if (animate) doc["animate"] = true;
    if (provider) doc["provider"]["kind"] = *provider;
    if (fixtures) doc["provider"]["fixtures_dir"] = std::filesystem::absolute(*fixtures).string();
    if (endpoint) doc["provider"]["endpoint"] = *endpoint;
    if (model) doc["provider"]["model_name"] = *model;
    if (max_concurrency) doc["provider"]["max_concurrency"] = *max_concurrency;
    for (const auto& s : sets) {
      const auto eq = s.find('=');
      if (eq == std::string::npos || eq == 0) throw UsageError("--set expects key=value, got '" + s + "'");
      auto value = nlohmann::json::parse(s.substr(eq + 1), nullptr, false);
      if (value.is_discarded()) value = s.substr(eq + 1);
      nlohmann::json* target = &doc;
      std::string key = s.substr(0, eq);
      for (auto dot = key.find('.'); dot != std::string::npos; dot = key.find('.')) {
        target = &(*target)[key.substr(0, dot)];
        key = key.substr(dot + 1);
      }
      (*target)[key] = value;
    }
    return doc;
  }
};

sasav::RunConfig load_config(const std::optional<std::string>& file, const ConfigFlags& flags) {
  try {
    std::optional<std::filesystem::path> path;
    if (file) path = *file;
    return sasav::resolve_config(path, flags.to_json());
  } catch (const sasav::Error& e) {
    throw UsageError(e.what());
  }
}

int cmd_run(const std::string& input, const std::string& meta_path, const std::string& out,
            const std::optional<std::string>& config_file, const ConfigFlags& flags, bool resume) {
  const auto config = load_config(config_file, flags);
  sasav::RunRequest request;
  request.input = input;
  request.out_dir = out;
  request.config = config;
  request.resume = resume;
  try {
    request.meta = sasav::read_meta(meta_path);
  } catch (const sasav::Error& e) {
    std::cerr << "sasav: " << e.what() << "\n";
    return kExitAbort;
  }
  const auto outcome = sasav::run_pipeline(request, sasav::make_provider(config.provider));
  for (const auto& w : outcome.warnings) std::cerr << "warning: " << w << "\n";
  if (!outcome.ok) {
    std::cerr << "sasav: run aborted in stage '" << outcome.failed_stage << "': " << outcome.error << "\n";
  }
  const auto census = outcome.census.to_json();
  std::cerr << "chats: " << census["total_chats"] << ", tokens in/out: " << census["input_tokens"] << "/"
            << census["output_tokens"] << "\n";
  std::cout << std::filesystem::absolute(outcome.dir).string() << "\n";
  return outcome.exit_code();
}

int cmd_kb_build(const std::string& docs, const std::string& out, const std::optional<std::string>& config_file,
                 const ConfigFlags& flags, int chunk_size, int overlap) {
  const auto config = load_config(config_file, flags);
  sasav::ChatClient client(sasav::make_provider(config.provider), config.provider);
  const auto index = sasav::build_knowledge_base(docs, client, chunk_size, overlap);
  index.save(out);
  std::cout << index.size() << " chunks written to " << out << "\n";
  return kExitOk;
}

int cmd_render(const std::string& run_dir, const std::string& out, const std::optional<std::string>& camera,
               const std::optional<std::string>& tf, std::optional<int> resolution) {
  sasav::RunArtifacts artifacts;
  try {
    artifacts = sasav::RunArtifacts::open(run_dir);
  } catch (const sasav::Error& e) {
    std::cerr << "sasav: " << e.what() << "\n";
    return kExitBadArtifacts;
  }
  sasav::RenderOverrides overrides;
  try {
    if (camera) overrides.camera = parse_json_arg(*camera, "--camera").get<sasav::Camera>();
    if (tf) overrides.tf = sasav::tf_from_json(parse_json_arg(*tf, "--tf"));
  } catch (const nlohmann::json::exception& e) {
    throw UsageError(e.what());
  } catch (const sasav::Error& e) {
    throw UsageError(e.what());
  }
  overrides.resolution = resolution;
  sasav::write_png(out, artifacts.render(overrides));
  std::cout << out << "\n";
  return kExitOk;
}

int cmd_export_tf(const std::string& source, const std::string& format, const std::optional<std::string>& out) {
  std::filesystem::path path = source;
  if (std::filesystem::is_directory(path)) path /= "tf.json";
  std::ifstream in(path);
  if (!in) {
    std::cerr << "sasav: cannot open " << path << "\n";
    return kExitBadArtifacts;
  }
  const auto doc = nlohmann::json::parse(in, nullptr, false);
  if (doc.is_discarded()) {
    std::cerr << "sasav: " << path << " is not valid JSON\n";
    return kExitBadArtifacts;
  }
  const auto tf = sasav::tf_from_json(doc);
  const auto text = sasav::export_tf(tf, format == "ct" ? sasav::TfFormat::kCt : sasav::TfFormat::kStructured);
  if (out) {
    std::ofstream f(*out, std::ios::binary);
    f << text;
  } else {
    std::cout << text;
  }
  return kExitOk;
}

int cmd_synth(const std::string& kind, int size, const std::string& prefix) {
  sasav::Volume v;
  if (kind == "shells") v = sasav::synthetic::nested_shells(size);
  else if (kind == "blob") v = sasav::synthetic::gaussian_blob(size);
  else if (kind == "labels") v = sasav::synthetic::label_shells(size);
  else if (kind == "sphere") v = sasav::synthetic::sphere_distance(size);
  else throw UsageError("unknown synthetic kind '" + kind + "'");
  if (const auto parent = std::filesystem::path(prefix).parent_path(); !parent.empty()) {
    std::filesystem::create_directories(parent);
  }
  sasav::save_raw(prefix + ".raw", v);
  std::ofstream(prefix + ".json") << sasav::meta_to_json(v.meta()).dump(2) << "\n";
  std::cout << prefix << ".raw\n";
  return kExitOk;
}

sasav::Service* g_service = nullptr;

void on_signal(int) {
  if (g_service) g_service->stop();
}

int cmd_serve(const std::string& root, const std::string& host, int port, const std::optional<std::string>& config_file,
              const ConfigFlags& flags) {
  sasav::ServerOptions options;
  options.runs_root = root;
  nlohmann::json base = flags.to_json();
  if (config_file) {
    auto file = parse_json_arg("@" + *config_file, "--config");
    file.merge_patch(base);
    base = file;
  }
  sasav::RunConfig probe;
  try {
    sasav::merge_config(probe, base);
  } catch (const sasav::Error& e) {
    throw UsageError(e.what());
  }
  options.base_config = base;
  sasav::Service service(options);
  g_service = &service;
  std::signal(SIGINT, on_signal);
  std::signal(SIGTERM, on_signal);
  std::cerr << "serving " << root << " on http://" << host << ":" << port << "\n";
  service.listen(host, port);
  g_service = nullptr;
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Autonomous volume visualization agent"};
  app.require_subcommand(1);

  auto* run = app.add_subcommand("run", "Run the full pipeline on a raw volume");
  std::string input, meta, out;
  std::optional<std::string> config_file;
  bool resume = false;
  ConfigFlags run_flags;
  run->add_option("--input", input, "Raw volume file")->required();
  run->add_option("--meta", meta, "Metadata sidecar (defaults to <input stem>.json)");
  run->add_option("--out", out, "Artifact directory")->required();
  run->add_option("--config", config_file, "Config file");
  run->add_flag("--resume", resume, "Reuse finished stages in --out");
  run_flags.add(run);

  auto* kb = app.add_subcommand("kb", "Knowledge base tools");
  kb->require_subcommand(1);
  auto* kb_build = kb->add_subcommand("build", "Chunk and embed Markdown documents");
  std::string docs, kb_out;
  int chunk_size = sasav::kDefaultChunkSize, overlap = sasav::kDefaultChunkOverlap;
  ConfigFlags kb_flags;
  kb_build->add_option("--docs", docs, "Directory of .md files")->required();
  kb_build->add_option("--out", kb_out, "Index directory")->required();
  kb_build->add_option("--config", config_file, "Config file");
  kb_build->add_option("--chunk-size", chunk_size, "Characters per chunk");
  kb_build->add_option("--overlap", overlap, "Characters shared by consecutive chunks");
  kb_flags.add(kb_build);

  auto* render = app.add_subcommand("render", "Re-render a finished run");
  std::string run_dir, image_out;
  std::optional<std::string> camera, tf;
  std::optional<int> resolution;
  render->add_option("--run", run_dir, "Run artifact directory")->required();
  render->add_option("--out", image_out, "Output PNG")->required();
  render->add_option("--camera", camera, "Camera JSON or @file");
  render->add_option("--tf", tf, "Transfer function JSON or @file");
  render->add_option("--resolution", resolution, "Square output resolution");

  auto* serve = app.add_subcommand("serve", "Serve runs over HTTP");
  std::string root = "runs", host = "127.0.0.1";
  int port = 8080;
  ConfigFlags serve_flags;
  serve->add_option("--root", root, "Directory holding run directories");
  serve->add_option("--host", host, "Bind address");
  serve->add_option("--port", port, "Port");
  serve->add_option("--config", config_file, "Base config for runs started over HTTP");
  serve_flags.add(serve);

  auto* export_tf = app.add_subcommand("export-tf", "Export a transfer function");
  std::string tf_source, format = "ct";
  std::optional<std::string> tf_out;
  export_tf->add_option("source", tf_source, "Run directory or tf.json")->required();
  export_tf->add_option("--format", format, "ct or json")->check(CLI::IsMember({"ct", "json"}));
  export_tf->add_option("--out", tf_out, "Output file (stdout when omitted)");

  auto* synth = app.add_subcommand("synth", "Write a synthetic test volume");
  std::string kind = "shells", prefix;
  int size = 64;
  synth->add_option("--kind", kind, "shells, blob, labels or sphere");
  synth->add_option("--size", size, "Voxels per axis");
  synth->add_option("--out", prefix, "Output path without extension")->required();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::CallForAllHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return kExitUsage;
  }

  try {
    if (run->parsed()) {
      if (meta.empty()) meta = std::filesystem::path(input).replace_extension(".json").string();
      return cmd_run(input, meta, out, config_file, run_flags, resume);
    }
    if (kb_build->parsed()) return cmd_kb_build(docs, kb_out, config_file, kb_flags, chunk_size, overlap);
    if (render->parsed()) return cmd_render(run_dir, image_out, camera, tf, resolution);
    if (serve->parsed()) return cmd_serve(root, host, port, config_file, serve_flags);
    if (export_tf->parsed()) return cmd_export_tf(tf_source, format, tf_out);
    if (synth->parsed()) return cmd_synth(kind, size, prefix);
  } catch (const UsageError& e) {
    std::cerr << "sasav: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "sasav: " << e.what() << "\n";
    return kExitAbort;
  }
  return kExitUsage;
}
