// m3v command line: build-targets, train-toy, visualize, gen-synth.

#include <algorithm>
#include <cstdio>
#include <filesystem>
#include <iostream>
#include <optional>
#include <sstream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "m3v/config.hpp"
#include "m3v/error.hpp"
#include "m3v/model/checkpoint.hpp"
#include "m3v/model/train.hpp"
#include "m3v/parallel.hpp"
#include "m3v/pipeline.hpp"
#include "m3v/synth.hpp"
#include "m3v/trajectories.hpp"
#include "m3v/video_io.hpp"
#include "m3v/visualize.hpp"

namespace fs = std::filesystem;

namespace {

struct Globals {
  std::string config;
  std::optional<std::uint64_t> seed;
  int threads = m3v::default_thread_count();
  bool compensate = false;
  bool interpolate = false;
  std::string target_kind;
};

m3v::PipelineConfig resolve_config(const Globals& g) {
  m3v::PipelineConfig cfg = g.config.empty() ? m3v::PipelineConfig{} : m3v::load_config(g.config);
  if (g.seed) cfg.set_seed(*g.seed);
  cfg.pipeline.threads = g.threads;
  if (g.compensate) cfg.pipeline.compensate_camera = true;
  if (g.interpolate) cfg.pipeline.interpolate = true;
  if (!g.target_kind.empty()) {
    try {
      cfg.pipeline.target.kind = m3v::parse_target_kind(g.target_kind);
    } catch (const m3v::InvalidArgument& e) {
      throw m3v::ConfigError(e.what());
    }
  }
  cfg.validate();
  return cfg;
}

bool has_extension(const fs::path& p, std::initializer_list<const char*> exts) {
  const auto e = p.extension().string();
  return std::any_of(exts.begin(), exts.end(), [&](const char* x) { return e == x; });
}

// A .y4m file, a single .pgm/.ppm image, or a directory of them (sorted
// by file name).
m3v::FrameSequence load_video(const std::string& path) {
  const fs::path p(path);
  if (!fs::exists(p)) throw m3v::IoError("no such file or directory: " + path);
  if (fs::is_directory(p)) {
    std::vector<std::string> frames;
    for (const auto& e : fs::directory_iterator(p))
      if (e.is_regular_file() && has_extension(e.path(), {".pgm", ".ppm"}))
        frames.push_back(e.path().string());
    std::sort(frames.begin(), frames.end());
    if (frames.empty()) throw m3v::IoError("no .pgm/.ppm frames in " + path);
    return m3v::load_image_sequence(frames);
  }
  if (has_extension(p, {".y4m"})) return m3v::read_y4m(path);
  if (has_extension(p, {".pgm", ".ppm"})) return m3v::load_image_sequence({path});
  throw m3v::IoError("unsupported input (expected .y4m, .pgm, .ppm or a directory): " + path);
}

void ensure_dir(const fs::path& dir) {
  std::error_code ec;
  fs::create_directories(dir, ec);
  if (ec) throw m3v::IoError("cannot create " + dir.string() + ": " + ec.message());
}

std::string format_double(double v) {
  char buf[64];
  std::snprintf(buf, sizeof buf, "%.9g", v);
  return buf;
}

// ---------------------------------------------------------------------------

int build_targets(const Globals& g, const std::string& input, const std::string& output,
                  const std::string& pack_path) {
  const auto cfg = resolve_config(g);
  const auto video = load_video(input);
  const auto res = m3v::build_clip_targets(video, cfg.pipeline);
  m3v::write_file(output, m3v::encode_m3vt(res.file));
  if (!pack_path.empty()) m3v::write_file(pack_path, m3v::encode_m3tp(res.pack));
  std::cout << "patches: " << res.grid.size() << "\n"
            << "grid: " << res.grid.grid_t() << "x" << res.grid.grid_h() << "x"
            << res.grid.grid_w() << "\n"
            << "masked: " << res.mask.count() << "\n"
            << "targets: " << res.file.patches.size() << "\n"
            << "target_kind: " << m3v::to_string(res.file.config.kind) << "\n"
            << "trajectories: " << res.trajectories << "\n"
            << "invalid_fraction: " << format_double(res.invalid_fraction()) << "\n";
  if (cfg.pipeline.compensate_camera) {
    std::cout << "compensation_fallbacks: " << res.compensation_fallbacks << "/" << res.flow_pairs
              << "\n";
  }
  return 0;
}

struct DatasetEntry {
  fs::path video;
  fs::path targets;
};

std::vector<DatasetEntry> list_dataset(const std::string& dir) {
  if (!fs::is_directory(dir)) throw m3v::IoError("not a directory: " + dir);
  std::vector<DatasetEntry> out;
  for (const auto& e : fs::directory_iterator(dir))
    if (e.is_regular_file() && has_extension(e.path(), {".y4m"})) {
      auto t = e.path();
      t.replace_extension(".m3vt");
      out.push_back({e.path(), t});
    }
  std::sort(out.begin(), out.end(),
            [](const DatasetEntry& a, const DatasetEntry& b) { return a.video < b.video; });
  if (out.empty()) throw m3v::ConfigError("dataset directory " + dir + " holds no .y4m clips");
  return out;
}

m3v::FrameSequence sampled_input(const m3v::FrameSequence& video, int s_rgb, int offset) {
  try {
    return m3v::input_clip(video, m3v::plan_sampling(static_cast<int>(video.size()), s_rgb,
                                                     false, offset));
  } catch (const m3v::InvalidArgument& e) {
    throw m3v::PipelineError(e.what());
  }
}

void write_metrics(const fs::path& path, const std::vector<m3v::model::EpochMetrics>& rows) {
  std::string csv = "epoch,loss,lr,seconds\n";
  for (const auto& m : rows) {
    char buf[160];
    std::snprintf(buf, sizeof buf, "%d,%.9g,%.9g,%.3f\n", m.epoch, m.loss, m.lr, m.seconds);
    csv += buf;
  }
  m3v::write_file(path.string(), csv);
}

int train_toy(const Globals& g, const std::string& dataset_dir, const std::string& out_dir,
              bool probe) {
  const auto cfg = resolve_config(g);
  const auto entries = list_dataset(dataset_dir);
  ensure_dir(out_dir);

  if (probe) {
    if (cfg.pipeline.mask_type != m3v::MaskType::kTube) {
      throw m3v::ConfigError("--probe-static needs mask.type = tube");
    }
    std::vector<m3v::FrameSequence> videos;
    for (const auto& e : entries) videos.push_back(load_video(e.video.string()));
    std::string csv = "epoch,target,input_mode,loss\n";
    for (auto kind : {m3v::TargetKind::kPixel, m3v::TargetKind::kTrajectory}) {
      std::vector<m3v::FrameSequence> inputs;
      std::vector<m3v::ClipTargets> targets;
      for (std::size_t i = 0; i < videos.size(); ++i) {
        auto opts = cfg.pipeline;
        opts.target.kind = kind;
        opts.all_patches = true;
        opts.mask_seed = cfg.pipeline.mask_seed + i;
        targets.push_back(m3v::build_clip_targets(videos[i], opts));
        inputs.push_back(m3v::input_clip(videos[i], targets.back().plan));
      }
      const auto data = m3v::model::make_toy_dataset(inputs, targets);
      const auto curves = m3v::model::static_video_probe(data, cfg.train, cfg.model);
      for (const auto* run : {&curves.multi, &curves.stat}) {
        const char* mode = run == &curves.multi ? "multi" : "static";
        for (const auto& m : run->epochs) {
          csv += std::to_string(m.epoch) + "," + std::string(m3v::to_string(kind)) + "," + mode +
                 "," + format_double(m.loss) + "\n";
        }
      }
      std::cerr << m3v::to_string(kind) << ": static/multi final loss ratio "
                << format_double(curves.final_ratio()) << "\n";
    }
    m3v::write_file((fs::path(out_dir) / "probe.csv").string(), csv);
    return 0;
  }

  m3v::model::ToyDataset data;
  for (std::size_t i = 0; i < entries.size(); ++i) {
    const auto file = m3v::decode_m3vt(m3v::read_file(entries[i].targets.string()));
    const auto video = load_video(entries[i].video.string());
    if (i == 0) {
      data.grid = file.grid;
      data.channels = file.channels;
      data.target = file.config;
      data.mask_type = file.mask_type;
      data.mask_ratio = file.ratio;
    } else if (!(file.grid == data.grid) || file.channels != data.channels ||
               file.config.kind != data.target.kind || file.config.K != data.target.K ||
               file.config.L != data.target.L) {
      throw m3v::ConfigError(entries[i].targets.string() + " disagrees with " +
                             entries[0].targets.string() + " on grid or target layout");
    }
    const auto input = sampled_input(video, file.s_rgb, cfg.pipeline.offset);
    if (input.width() != file.grid.width() || input.height() != file.grid.height() ||
        input.channels() != file.channels) {
      throw m3v::ConfigError(entries[i].video.string() + " does not match its target file");
    }
    data.clips.push_back(m3v::model::make_toy_clip(input, file));
  }
  auto result = m3v::model::train_toy(data, cfg.train, cfg.model, m3v::model::InputMode::kMultiFrame,
                                      [](const m3v::model::EpochMetrics& m) {
                                        std::cerr << "epoch " << m.epoch << " loss "
                                                  << format_double(m.loss) << "\n";
                                      });
  write_metrics(fs::path(out_dir) / "metrics.csv", result.epochs);
  m3v::write_file((fs::path(out_dir) / "checkpoint.m3ck").string(),
                  m3v::model::encode_m3ck(m3v::model::make_checkpoint(result.model)));
  return 0;
}

int visualize(const Globals&, const std::string& video_path, const std::string& pack_path,
              const std::string& out_dir) {
  const auto video = load_video(video_path);
  const auto pack = m3v::decode_m3tp(m3v::read_file(pack_path));
  if (pack.width != static_cast<std::uint32_t>(video.width()) ||
      pack.height != static_cast<std::uint32_t>(video.height())) {
    throw m3v::ConfigError("trajectory pack is " + std::to_string(pack.width) + "x" +
                           std::to_string(pack.height) + " but the video is " +
                           std::to_string(video.width()) + "x" + std::to_string(video.height()));
  }
  ensure_dir(out_dir);
  const fs::path dir(out_dir);
  char name[64];
  if (pack.trajectories.empty()) {
    for (std::size_t i = 0; i < video.size(); ++i) {
      std::snprintf(name, sizeof name, "frame_%04zu.ppm", i);
      m3v::write_file((dir / name).string(), m3v::synth::encode_pnm(m3v::to_rgb(video[i])));
    }
  } else {
    std::map<std::uint32_t, m3v::Frame> frames;
    try {
      frames = m3v::render_overlays(video, pack);
    } catch (const m3v::InvalidArgument& e) {
      throw m3v::ConfigError(e.what());
    }
    for (const auto& [anchor, img] : frames) {
      std::snprintf(name, sizeof name, "anchor_%04u.ppm", anchor);
      m3v::write_file((dir / name).string(), m3v::synth::encode_pnm(img));
    }
  }
  m3v::write_file((dir / "overlay.svg").string(), m3v::svg_overlay(pack));
  return 0;
}

struct SynthOptions {
  std::string kind;
  std::string out;
  int width = 64;
  int height = 64;
  int frames = 16;
  std::vector<double> velocity{2.0, 0.0};
  double radius = 8.0;
  double speed = 3.0;
  int clips = 8;
  std::string format = "y4m";
};

void write_video(const m3v::FrameSequence& seq, const fs::path& base, const std::string& format) {
  if (format == "y4m") {
    m3v::write_file(base.string() + ".y4m", m3v::synth::encode_y4m(seq));
  } else {
    ensure_dir(base);
    m3v::synth::write_pnm_sequence(seq, base.string());
  }
}

int gen_synth(const Globals& g, const SynthOptions& o) {
  const std::uint64_t seed = g.seed.value_or(0);
  if (o.format != "y4m" && o.format != "pnm") throw m3v::ConfigError("--format must be y4m or pnm");
  ensure_dir(o.out);
  const fs::path dir(o.out);
  const m3v::synth::Velocity vel{o.velocity.at(0), o.velocity.at(1)};
  if (o.kind == "texture") {
    const auto [seq, truth] = m3v::synth::gen_translating_texture(o.width, o.height, vel, o.frames, seed);
    write_video(seq, dir / "texture", o.format);
  } else if (o.kind == "disk") {
    const auto [seq, truth] =
        m3v::synth::gen_moving_disk(o.width, o.height, o.radius, vel, o.frames, seed);
    write_video(seq, dir / "disk", o.format);
  } else if (o.kind == "disk-dataset") {
    m3v::synth::DiskDatasetParams p;
    p.clips = o.clips;
    p.width = o.width;
    p.height = o.height;
    p.frames = o.frames;
    p.radius = o.radius;
    p.speed = o.speed;
    const auto clips = m3v::synth::make_disk_dataset(p, seed);
    std::string labels = "clip,label,u,v\n";
    char name[64];
    for (std::size_t i = 0; i < clips.size(); ++i) {
      std::snprintf(name, sizeof name, "clip_%04zu", i);
      write_video(clips[i].video, dir / name, o.format);
      labels += std::string(name) + "," + std::to_string(clips[i].truth.label) + "," +
                format_double(clips[i].truth.velocity.u) + "," +
                format_double(clips[i].truth.velocity.v) + "\n";
    }
    m3v::write_file((dir / "labels.csv").string(), labels);
  } else {
    throw m3v::ConfigError("unknown synth kind \"" + o.kind + "\"");
  }
  return 0;
}

template <typename F>
int guarded(F&& f) {
  try {
    return f();
  } catch (const m3v::ConfigError& e) {
    std::cerr << "config error: " << e.what() << "\n";
    return 1;
  } catch (const m3v::IoError& e) {
    std::cerr << "i/o error: " << e.what() << "\n";
    return 2;
  } catch (const m3v::FormatError& e) {
    std::cerr << "input error: " << e.what() << "\n";
    return 2;
  } catch (const m3v::DivergenceError& e) {
    std::cerr << "training diverged: " << e.what() << "\n";
    return 4;
  } catch (const std::exception& e) {
    std::cerr << "pipeline error: " << e.what() << "\n";
    return 3;
  }
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{"Trajectory motion targets and masked motion modeling at desk scale"};
  app.require_subcommand(1);
  Globals g;
  std::uint64_t seed = 0;
  auto* seed_opt = app.add_option("--seed", seed, "Seed for masks, model init and data order");
  app.add_option("--config", g.config, "key = value configuration file");
  app.add_option("--threads", g.threads, "Worker threads (default: M3V_THREADS or 1)")
      ->check(CLI::PositiveNumber);
  app.add_flag("--compensate-camera", g.compensate, "Remove global camera motion before flow");
  app.add_flag("--interpolate", g.interpolate, "Track at raw frame rate (s_flow = 1)");
  app.add_option("--target-kind", g.target_kind,
                 "pixel|hog|hog+flow|hog+hof|hog+mbh|trajectory|trajectory_no_shape");

  std::string input, output, pack;
  auto* build = app.add_subcommand("build-targets", "Video -> flow -> trajectories -> .m3vt");
  build->add_option("input", input, "Video (.y4m, image or directory of images)")->required();
  build->add_option("-o,--output", output, "Output .m3vt file")->required();
  build->add_option("--pack", pack, "Also write the trajectories as .m3tp");

  std::string dataset, out_dir;
  bool probe = false;
  auto* train = app.add_subcommand("train-toy", "Pre-train the toy model on a clip directory");
  train->add_option("dataset", dataset, "Directory of .y4m clips with matching .m3vt files")
      ->required();
  train->add_option("-o,--output", out_dir, "Output directory")->required();
  train->add_flag("--probe-static", probe, "Static-video probe for pixel and trajectory targets");

  std::string vis_video, vis_pack, vis_out;
  auto* vis = app.add_subcommand("visualize", "Draw trajectories over their anchor frames");
  vis->add_option("video", vis_video, "Video the pack was built from")->required();
  vis->add_option("pack", vis_pack, ".m3tp trajectory pack")->required();
  vis->add_option("-o,--output", vis_out, "Output directory")->required();

  SynthOptions so;
  auto* gen = app.add_subcommand("gen-synth", "Write synthetic videos");
  gen->add_option("kind", so.kind, "texture | disk | disk-dataset")->required();
  gen->add_option("-o,--output", so.out, "Output directory")->required();
  gen->add_option("--width", so.width)->check(CLI::PositiveNumber);
  gen->add_option("--height", so.height)->check(CLI::PositiveNumber);
  gen->add_option("--frames", so.frames)->check(CLI::PositiveNumber);
  gen->add_option("--velocity", so.velocity, "u v in px/frame")->expected(2);
  gen->add_option("--radius", so.radius);
  gen->add_option("--speed", so.speed, "disk-dataset speed in px/frame");
  gen->add_option("--clips", so.clips)->check(CLI::PositiveNumber);
  gen->add_option("--format", so.format, "y4m | pnm");

  for (auto* sub : {build, train, vis, gen}) sub->fallthrough();

  try {
    app.parse(argc, argv);
  } catch (const CLI::CallForHelp& e) {
    return app.exit(e);
  } catch (const CLI::ParseError& e) {
    app.exit(e);
    return 1;
  }
  if (*seed_opt) g.seed = seed;

  return guarded([&] {
    if (*build) return build_targets(g, input, output, pack);
    if (*train) return train_toy(g, dataset, out_dir, probe);
    if (*vis) return visualize(g, vis_video, vis_pack, vis_out);
    return gen_synth(g, so);
  });
}
