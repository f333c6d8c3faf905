#include <charconv>
#include <cstdint>
#include <fstream>
#include <functional>
#include <iostream>
#include <sstream>
#include <string>
#include <thread>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include "supfex/batch.hpp"
#include "supfex/compare.hpp"
#include "supfex/interpret.hpp"
#include "supfex/model.hpp"
#include "supfex/oracle.hpp"
#include "supfex/supfex.hpp"
#include "supfex/verifier.hpp"

namespace {

using nlohmann::ordered_json;

// Exit codes: 0 = analysis completed (even if the property is unverified),
// 1 = usage error, 2 = I/O or parse error.
constexpr int kExitOk = 0;
constexpr int kExitUsage = 1;
constexpr int kExitIo = 2;

std::string read_file(const std::string& path) {
  std::ifstream f(path, std::ios::binary);
  if (!f) throw supfex::ParseError("cannot open " + path);
  std::ostringstream buf;
  buf << f.rdbuf();
  if (!f.good() && !f.eof())
    throw supfex::ParseError("cannot read " + path);
  return buf.str();
}

void write_file(const std::string& path, const std::string& content) {
  std::ofstream f(path, std::ios::binary);
  if (!f) throw supfex::ParseError("cannot open " + path + " for writing");
  f << content;
  if (!f) throw supfex::ParseError("cannot write " + path);
}

void emit_report(const ordered_json& report, const std::string& out_path) {
  const std::string text = report.dump(2) + "\n";
  if (out_path.empty())
    std::cout << text;
  else
    write_file(out_path, text);
}

supfex::Network load_network(const std::string& path) {
  return supfex::parse_network(read_file(path));
}

supfex::Dataset load_dataset(const std::string& path) {
  return supfex::load_dataset_csv(read_file(path));
}

const supfex::Sample& pick_sample(const supfex::Dataset& ds,
                                  std::size_t index) {
  if (index >= ds.size())
    throw supfex::IndexError("image index " + std::to_string(index) +
                             " out of range (dataset has " +
                             std::to_string(ds.size()) + " rows)");
  return ds.samples[index];
}

std::size_t effective_label(const supfex::Sample& sample, long long flag) {
  if (flag < 0) return sample.label;
  return std::size_t(flag);
}

/// "2", "0..3" (inclusive), or "0,2,5".
std::vector<std::size_t> parse_ranks(const std::string& text) {
  std::vector<std::size_t> ranks;
  std::istringstream parts(text);
  std::string part;
  while (std::getline(parts, part, ',')) {
    const std::size_t dots = part.find("..");
    try {
      if (dots == std::string::npos) {
        ranks.push_back(std::stoul(part));
      } else {
        const std::size_t a = std::stoul(part.substr(0, dots));
        const std::size_t b = std::stoul(part.substr(dots + 2));
        if (b < a)
          throw supfex::ValidationError("ranks: bad range \"" + part + "\"");
        for (std::size_t r = a; r <= b; ++r) ranks.push_back(r);
      }
    } catch (const std::invalid_argument&) {
      throw supfex::ValidationError("ranks: cannot parse \"" + part + "\"");
    } catch (const std::out_of_range&) {
      throw supfex::ValidationError("ranks: value out of range in \"" + part +
                                    "\"");
    }
  }
  if (ranks.empty())
    throw supfex::ValidationError("ranks: no ranks given");
  return ranks;
}

std::string shortest_double(double v) {
  char buf[32];
  const auto res = std::to_chars(buf, buf + sizeof(buf), v);
  return std::string(buf, res.ptr);
}

ordered_json verify_record_json(const supfex::PropertyRecord& r) {
  ordered_json j;
  j["image_index"] = r.image_index;
  j["label"] = r.label;
  j["epsilon"] = r.epsilon;
  j["domain"] = supfex::domain_name(r.domain);
  j["verified"] = r.verified;
  j["lambda"] = r.lambda;
  j["feature_count_full"] = r.feature_count_full;
  j["feature_count_thm2"] = r.feature_count_thm2;
  j["verifier_calls"] = r.verifier_calls;
  return j;
}

int run_guarded(const std::function<int()>& body) {
  try {
    return body();
  } catch (const supfex::ParseError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const supfex::ShapeError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  } catch (const supfex::GuardError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const supfex::IndexError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const supfex::ValidationError& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitUsage;
  } catch (const std::exception& e) {
    std::cerr << "error: " << e.what() << "\n";
    return kExitIo;
  }
}

struct CommonFlags {
  std::string network_path;
  std::string dataset_path;
  std::size_t index = 0;
  long long label = -1;  // negative: use the dataset label
  double epsilon = 0.0;
  std::string domain = "deepz";
  std::string out_path;
};

void add_common(CLI::App* sub, CommonFlags& f, bool with_domain = true) {
  sub->add_option("--network", f.network_path, "network JSON file")
      ->required();
  sub->add_option("--dataset", f.dataset_path, "dataset CSV file")->required();
  sub->add_option("--index", f.index, "dataset row to analyze (default 0)");
  sub->add_option("--label", f.label,
                  "class to certify (default: the dataset label)");
  sub->add_option("--epsilon", f.epsilon, "L-inf radius")->required();
  if (with_domain)
    sub->add_option("--domain", f.domain, "abstract domain: ibp or deepz");
  sub->add_option("--out", f.out_path, "report file (default: stdout)");
}

ordered_json common_flags_json(const CommonFlags& f, std::size_t label_used) {
  ordered_json j;
  j["dataset"] = f.dataset_path;
  j["index"] = f.index;
  j["label"] = label_used;
  j["epsilon"] = f.epsilon;
  j["domain"] = f.domain;
  return j;
}

int cmd_verify(const CommonFlags& f) {
  const supfex::Network net = load_network(f.network_path);
  const supfex::Domain domain = supfex::domain_from_name(f.domain);
  const supfex::Dataset ds = load_dataset(f.dataset_path);
  const supfex::Sample& sample = pick_sample(ds, f.index);
  const std::size_t label = effective_label(sample, f.label);
  const supfex::Property prop =
      supfex::robustness_property(net.output_dim(), label);
  const supfex::InputRegion region =
      supfex::build_region(sample.pixels, f.epsilon);

  const supfex::Analysis analysis = supfex::analyze(net, region, domain);
  const supfex::VerificationResult res =
      supfex::check_property(analysis, net, prop);

  supfex::PropertyRecord rec;
  rec.image_index = f.index;
  rec.label = label;
  rec.epsilon = f.epsilon;
  rec.domain = domain;
  rec.verified = res.verified;
  rec.lambda = res.lambda;
  rec.feature_count_full = net.penultimate_dim();
  rec.verifier_calls = 1;
  if (res.verified) {
    const supfex::ProofFeatureSet fs =
        supfex::compute_priorities(analysis, net, prop);
    rec.feature_count_thm2 = supfex::theorem2_bound(fs, res.lambda);
  }

  ordered_json report =
      supfex::report_envelope("verify", net, common_flags_json(f, label));
  report["record"] = verify_record_json(rec);
  emit_report(report, f.out_path);
  return kExitOk;
}

int cmd_supfex(const CommonFlags& f, const supfex::SupfexOptions& opts) {
  const supfex::Network net = load_network(f.network_path);
  const supfex::Domain domain = supfex::domain_from_name(f.domain);
  const supfex::Dataset ds = load_dataset(f.dataset_path);
  const supfex::Sample& sample = pick_sample(ds, f.index);
  const std::size_t label = effective_label(sample, f.label);
  const supfex::Property prop =
      supfex::robustness_property(net.output_dim(), label);
  const supfex::InputRegion region =
      supfex::build_region(sample.pixels, f.epsilon);

  const supfex::SupfexOutcome out =
      supfex::supfex_extract(net, region, prop, domain, opts);
  const supfex::PropertyRecord rec =
      supfex::make_record(f.index, label, f.epsilon, domain, net, out);

  ordered_json flags = common_flags_json(f, label);
  flags["zero_threshold"] = opts.zero_threshold;
  ordered_json report = supfex::report_envelope("supfex", net, flags);
  report["record"] = supfex::record_to_json(rec);
  if (out.verified) {
    ordered_json kept = ordered_json::array();
    for (std::size_t i : out.kept) {
      const supfex::ProofFeature& pf = out.features[i];
      kept.push_back({{"neuron", pf.neuron},
                      {"lo", pf.lo},
                      {"hi", pf.hi},
                      {"priority", pf.priority}});
    }
    report["kept_features"] = kept;
    report["zero_feature_count"] = out.zero_count;
  }
  emit_report(report, f.out_path);
  return kExitOk;
}

struct GradmapFlags {
  std::string ranks = "0";
  std::size_t count = 100;
  std::uint64_t seed = 0;
  double clip = 3.0;
  std::string shape;  // "WxH"; default from the network input shape
  bool per_channel = false;
  std::string prefix = "gradmap";
};

int cmd_gradmap(const CommonFlags& f, const GradmapFlags& g) {
  const supfex::Network net = load_network(f.network_path);
  const supfex::Domain domain = supfex::domain_from_name(f.domain);
  const supfex::Dataset ds = load_dataset(f.dataset_path);
  const supfex::Sample& sample = pick_sample(ds, f.index);
  const std::size_t label = effective_label(sample, f.label);
  const supfex::Property prop =
      supfex::robustness_property(net.output_dim(), label);
  const supfex::InputRegion region =
      supfex::build_region(sample.pixels, f.epsilon);

  const supfex::SupfexOutcome out =
      supfex::supfex_extract(net, region, prop, domain);
  if (!out.verified)
    throw supfex::ValidationError(
        "property not verified; there are no proof features to render");

  std::vector<std::size_t> ranks = parse_ranks(g.ranks);
  for (std::size_t r : ranks)
    if (r >= out.kept.size())
      throw supfex::IndexError(
          "rank " + std::to_string(r) + " out of range; available ranks: 0.." +
          std::to_string(out.kept.size() - 1) + " (" +
          std::to_string(out.kept.size()) + " kept features)");

  // Kept features by descending priority; rank 0 is the top proof feature.
  std::vector<std::size_t> by_priority = out.kept;
  std::sort(by_priority.begin(), by_priority.end(),
            [&](std::size_t a, std::size_t b) {
              const double pa = out.features[a].priority;
              const double pb = out.features[b].priority;
              if (pa != pb) return pa > pb;
              return a < b;
            });

  std::size_t channels = 1, width = 0, height = 0;
  if (net.input_shape.size() == 3) {
    channels = net.input_shape[0];
    height = net.input_shape[1];
    width = net.input_shape[2];
  }
  if (!g.shape.empty()) {
    const std::size_t x = g.shape.find('x');
    if (x == std::string::npos)
      throw supfex::ValidationError("shape: expected WxH, got \"" + g.shape +
                                    "\"");
    try {
      width = std::stoul(g.shape.substr(0, x));
      height = std::stoul(g.shape.substr(x + 1));
    } catch (const std::exception&) {
      throw supfex::ValidationError("shape: expected WxH, got \"" + g.shape +
                                    "\"");
    }
  }
  if (width == 0 || height == 0)
    throw supfex::ValidationError(
        "the network input is flat; pass --shape WxH");

  for (std::size_t r : ranks) {
    const std::size_t neuron = by_priority[r];
    supfex::GradientMap gm =
        supfex::gradient_map(net, region, neuron, g.count, g.seed);
    const std::string stem =
        g.prefix + "_rank" + std::to_string(r) + "_neuron" +
        std::to_string(neuron);
    if (g.per_channel && channels > 1) {
      const std::size_t plane = gm.values.size() / channels;
      for (std::size_t c = 0; c < channels; ++c) {
        supfex::GradientMap ch = gm;
        ch.values.assign(gm.values.begin() + std::ptrdiff_t(c * plane),
                         gm.values.begin() + std::ptrdiff_t((c + 1) * plane));
        const supfex::Image img =
            supfex::render_map(ch, width, height, g.clip);
        const std::string path = stem + "_ch" + std::to_string(c) + ".pgm";
        supfex::write_pgm(img, path);
        std::cout << "wrote " << path << "\n";
      }
    } else {
      if (channels > 1)
        gm.values = supfex::average_channels(gm.values, channels);
      const supfex::Image img = supfex::render_map(gm, width, height, g.clip);
      const std::string path = stem + ".pgm";
      supfex::write_pgm(img, path);
      std::cout << "wrote " << path << "\n";
    }
  }
  return kExitOk;
}

struct BatchFlags {
  std::string network_path;
  std::string dataset_path;
  std::size_t count = 500;
  double epsilon = 0.0;
  std::string domain = "deepz";
  std::size_t jobs = 0;
  std::string out_path;
  std::string hist_path;
};

std::size_t default_jobs(std::size_t flag) {
  if (flag > 0) return flag;
  const unsigned hw = std::thread::hardware_concurrency();
  return hw > 0 ? hw : 1;
}

int cmd_batch(const BatchFlags& f) {
  const supfex::Network net = load_network(f.network_path);
  const supfex::Domain domain = supfex::domain_from_name(f.domain);
  const supfex::Dataset ds = load_dataset(f.dataset_path);
  const supfex::BatchResult res = supfex::batch_run(
      net, ds, f.epsilon, domain, f.count, default_jobs(f.jobs));

  ordered_json flags;
  flags["dataset"] = f.dataset_path;
  flags["count"] = f.count;
  flags["epsilon"] = f.epsilon;
  flags["domain"] = f.domain;
  ordered_json report = supfex::report_envelope("batch", net, flags);
  report["summary"] = supfex::summary_to_json(res.summary);
  ordered_json records = ordered_json::array();
  for (const supfex::PropertyRecord& r : res.records)
    records.push_back(supfex::record_to_json(r));
  report["records"] = records;
  emit_report(report, f.out_path);
  if (!f.hist_path.empty())
    write_file(f.hist_path, supfex::histogram_csv(res.summary));
  return kExitOk;
}

int cmd_compare(const BatchFlags& f) {
  const supfex::Network net = load_network(f.network_path);
  const supfex::Dataset ds = load_dataset(f.dataset_path);
  const supfex::CompareRunResult res = supfex::compare_run(
      net, ds, f.epsilon, f.count, default_jobs(f.jobs));

  ordered_json flags;
  flags["dataset"] = f.dataset_path;
  flags["count"] = f.count;
  flags["epsilon"] = f.epsilon;
  ordered_json report = supfex::report_envelope("compare", net, flags);
  ordered_json summary = supfex::agreement_to_json(res.summary);
  summary["considered"] = res.considered;
  summary["misclassified"] = res.misclassified;
  report["summary"] = summary;
  ordered_json records = ordered_json::array();
  for (const supfex::CompareRunRecord& r : res.records) {
    ordered_json j;
    j["image_index"] = r.image_index;
    j["label"] = r.label;
    j["ibp_verified"] = r.result.ibp.verified;
    j["deepz_verified"] = r.result.deepz.verified;
    j["skipped"] = r.result.skipped();
    if (!r.result.skipped()) {
      j["same_top1"] = r.result.agreement->same_top1;
      j["same_top5"] = r.result.agreement->same_top5;
      j["same_full_set"] = r.result.agreement->same_full_set;
      j["ibp_kept"] = r.result.ibp.kept;
      j["deepz_kept"] = r.result.deepz.kept;
    }
    records.push_back(j);
  }
  report["records"] = records;
  emit_report(report, f.out_path);
  return kExitOk;
}

struct ConvertFlags {
  std::string images_path;
  std::string labels_path;
  std::string out_path;
  std::size_t limit = 0;  // 0: all
};

std::uint32_t be32(const unsigned char* p) {
  return (std::uint32_t(p[0]) << 24) | (std::uint32_t(p[1]) << 16) |
         (std::uint32_t(p[2]) << 8) | std::uint32_t(p[3]);
}

int cmd_convert(const ConvertFlags& f) {
  const std::string images = read_file(f.images_path);
  const std::string labels = read_file(f.labels_path);
  const auto* ip = reinterpret_cast<const unsigned char*>(images.data());
  const auto* lp = reinterpret_cast<const unsigned char*>(labels.data());

  if (images.size() < 16 || be32(ip) != 2051)
    throw supfex::ParseError(f.images_path +
                             ": not an IDX image file (magic 2051)");
  if (labels.size() < 8 || be32(lp) != 2049)
    throw supfex::ParseError(f.labels_path +
                             ": not an IDX label file (magic 2049)");
  const std::size_t n_images = be32(ip + 4);
  const std::size_t rows = be32(ip + 8);
  const std::size_t cols = be32(ip + 12);
  const std::size_t n_labels = be32(lp + 4);
  if (n_images != n_labels)
    throw supfex::ParseError("image count " + std::to_string(n_images) +
                             " != label count " + std::to_string(n_labels));
  const std::size_t pixels = rows * cols;
  if (images.size() != 16 + n_images * pixels)
    throw supfex::ParseError(f.images_path + ": truncated image data");
  if (labels.size() != 8 + n_labels)
    throw supfex::ParseError(f.labels_path + ": truncated label data");

  const std::size_t n =
      f.limit > 0 ? std::min(f.limit, n_images) : n_images;
  std::ostringstream out;
  for (std::size_t i = 0; i < n; ++i) {
    out << unsigned(lp[8 + i]);
    const unsigned char* px = ip + 16 + i * pixels;
    for (std::size_t p = 0; p < pixels; ++p)
      out << "," << shortest_double(double(px[p]) / 255.0);
    out << "\n";
  }
  write_file(f.out_path, out.str());
  std::cout << "wrote " << n << " rows (" << pixels << " pixels each) to "
            << f.out_path << "\n";
  return kExitOk;
}

}  // namespace

int main(int argc, char** argv) {
  CLI::App app{
      "supfex: robustness verification with minimal proof-feature "
      "extraction and gradient-map rendering"};
  app.require_subcommand(1);

  CommonFlags verify_flags;
  CLI::App* verify = app.add_subcommand(
      "verify", "check one robustness property with an abstract domain");
  add_common(verify, verify_flags);

  CommonFlags supfex_flags;
  supfex::SupfexOptions supfex_opts;
  CLI::App* supfex_cmd = app.add_subcommand(
      "supfex", "extract a small sufficient proof-feature set");
  add_common(supfex_cmd, supfex_flags);
  supfex_cmd->add_option("--zero-threshold", supfex_opts.zero_threshold,
                         "priorities at or below this count as zero");
  supfex_cmd->add_flag("--check-invariant", supfex_opts.check_loop_invariant,
                       "re-verify the search invariant each round (slow)");

  CommonFlags gradmap_flags;
  GradmapFlags gradmap_extra;
  CLI::App* gradmap = app.add_subcommand(
      "gradmap", "render gradient maps for the top kept features");
  add_common(gradmap, gradmap_flags);
  gradmap->add_option("--feature-rank,--ranks", gradmap_extra.ranks,
                      "kept-feature ranks: K, A..B, or comma list "
                      "(rank 0 = highest priority)");
  gradmap->add_option("--count", gradmap_extra.count,
                      "gradient samples per map (default 100)");
  gradmap->add_option("--seed", gradmap_extra.seed, "sampling seed");
  gradmap->add_option("--clip", gradmap_extra.clip,
                      "clip at mean +- this many stddevs (default 3)");
  gradmap->add_option("--shape", gradmap_extra.shape,
                      "image size as WxH (default: network input shape)");
  gradmap->add_flag("--per-channel", gradmap_extra.per_channel,
                    "one map per input channel instead of averaging");
  gradmap->add_option("--out-prefix", gradmap_extra.prefix,
                      "output file prefix (default: gradmap)");

  BatchFlags batch_flags;
  CLI::App* batch = app.add_subcommand(
      "batch", "verify + extract over the first N dataset images");
  batch->add_option("--network", batch_flags.network_path, "network JSON file")
      ->required();
  batch->add_option("--dataset", batch_flags.dataset_path, "dataset CSV file")
      ->required();
  batch->add_option("--count", batch_flags.count,
                    "images to take from the dataset (default 500)");
  batch->add_option("--epsilon", batch_flags.epsilon, "L-inf radius")
      ->required();
  batch->add_option("--domain", batch_flags.domain,
                    "abstract domain: ibp or deepz");
  batch->add_option("--jobs", batch_flags.jobs,
                    "worker threads (default: logical cores)");
  batch->add_option("--out", batch_flags.out_path,
                    "report file (default: stdout)");
  batch->add_option("--hist", batch_flags.hist_path,
                    "also write the kept-size histogram CSV here");

  BatchFlags compare_flags;
  CLI::App* compare = app.add_subcommand(
      "compare", "compare IBP and DeepZ proof features over a dataset");
  compare->add_option("--network", compare_flags.network_path,
                      "network JSON file")
      ->required();
  compare->add_option("--dataset", compare_flags.dataset_path,
                      "dataset CSV file")
      ->required();
  compare->add_option("--count", compare_flags.count,
                      "images to take from the dataset (default 500)");
  compare->add_option("--epsilon", compare_flags.epsilon, "L-inf radius")
      ->required();
  compare->add_option("--jobs", compare_flags.jobs,
                      "worker threads (default: logical cores)");
  compare->add_option("--out", compare_flags.out_path,
                      "report file (default: stdout)");

  ConvertFlags convert_flags;
  CLI::App* convert = app.add_subcommand(
      "convert", "convert IDX image/label dumps to the dataset CSV format");
  convert->add_option("--images", convert_flags.images_path, "IDX image file")
      ->required();
  convert->add_option("--labels", convert_flags.labels_path, "IDX label file")
      ->required();
  convert->add_option("--out", convert_flags.out_path, "output CSV file")
      ->required();
  convert->add_option("--limit", convert_flags.limit,
                      "convert at most this many rows (default: all)");

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

  if (app.got_subcommand(verify))
    return run_guarded([&] { return cmd_verify(verify_flags); });
  if (app.got_subcommand(supfex_cmd))
    return run_guarded([&] { return cmd_supfex(supfex_flags, supfex_opts); });
  if (app.got_subcommand(gradmap))
    return run_guarded([&] { return cmd_gradmap(gradmap_flags, gradmap_extra); });
  if (app.got_subcommand(batch))
    return run_guarded([&] { return cmd_batch(batch_flags); });
  if (app.got_subcommand(compare))
    return run_guarded([&] { return cmd_compare(compare_flags); });
  if (app.got_subcommand(convert))
    return run_guarded([&] { return cmd_convert(convert_flags); });
  return kExitUsage;
}
