// iorm: generate synthetic corpora, train and evaluate reward models, run the
// self-checks, and inspect checkpoints.

#include "iorm/dataset_file.hpp"
#include "iorm/serialization.hpp"
#include "iorm/training.hpp"
#include "iorm/verify.hpp"

#include <CLI11.hpp>

#include <chrono>
#include <ctime>
#include <iostream>
#include <map>

#ifndef IORM_BUILD_ID
#define IORM_BUILD_ID "unknown"
#endif

namespace {

using iorm::Json;
namespace fs = std::filesystem;

struct UsageError : std::runtime_error {
    using std::runtime_error::runtime_error;
};

std::string json_scalar(const Json& v) {
    if (v.is_string()) return v.get<std::string>();
    if (v.is_boolean()) return v.get<bool>() ? "on" : "off";
    return v.dump();
}

/// Expands `--config FILE` into flags placed right after the subcommand.
/// The file is a JSON object of flag names (without dashes) to values,
/// optionally nested under the subcommand's name; flags given on the command
/// line win over the file.
std::vector<std::string> expand_config(std::vector<std::string> args) {
    std::string file;
    for (std::size_t i = 1; i < args.size(); ++i) {
        if (args[i] == "--config" && i + 1 < args.size()) {
            file = args[i + 1];
            args.erase(args.begin() + static_cast<long>(i), args.begin() + static_cast<long>(i) + 2);
            break;
        }
        if (args[i].rfind("--config=", 0) == 0) {
            file = args[i].substr(9);
            args.erase(args.begin() + static_cast<long>(i));
            break;
        }
    }
    if (file.empty() || args.size() < 2) return args;
    Json j;
    try {
        const auto bytes = iorm::read_file(file);
        j = Json::parse(bytes.begin(), bytes.end());
    } catch (const std::exception& e) {
        throw UsageError("cannot read config " + file + ": " + e.what());
    }
    if (!j.is_object()) throw UsageError("config " + file + " must hold a JSON object");
    const std::string& sub = args[1];
    if (j.contains(sub) && j.at(sub).is_object()) j = j.at(sub);

    auto given = [&](const std::string& flag) {
        return std::any_of(args.begin() + 2, args.end(),
                           [&](const std::string& a) { return a == flag || a.rfind(flag + "=", 0) == 0; });
    };
    std::vector<std::string> injected;
    for (const auto& [key, value] : j.items()) {
        if (value.is_object()) continue;
        const std::string flag = "--" + key;
        if (given(flag)) continue;
        injected.push_back(flag);
        if (value.is_array())
            for (const auto& v : value) injected.push_back(json_scalar(v));
        else
            injected.push_back(json_scalar(value));
    }
    args.insert(args.begin() + 2, injected.begin(), injected.end());
    return args;
}

std::string utc_now() {
    const auto t = std::chrono::system_clock::to_time_t(std::chrono::system_clock::now());
    std::tm tm{};
    gmtime_r(&t, &tm);
    char buf[32];
    std::strftime(buf, sizeof buf, "%Y-%m-%dT%H:%M:%SZ", &tm);
    return buf;
}

void write_json(const fs::path& path, const Json& j) {
    const std::string s = j.dump(2) + "\n";
    iorm::write_file(path, iorm::Bytes(s.begin(), s.end()));
}

Json manifest(const std::string& command, const std::vector<std::string>& argv, Json config, std::uint64_t seed,
              const std::string& started) {
    return {{"command", command}, {"argv", argv},        {"config", std::move(config)}, {"seed", seed},
            {"build", IORM_BUILD_ID}, {"started", started}, {"finished", utc_now()}};
}

void require_writable_dir(const fs::path& dir) {
    std::error_code ec;
    fs::create_directories(dir.empty() ? fs::path(".") : dir, ec);
    if (ec || !fs::is_directory(dir.empty() ? fs::path(".") : dir))
        throw UsageError("cannot create output directory " + dir.string());
    const fs::path probe = (dir.empty() ? fs::path(".") : dir) / ".iorm-write-probe";
    std::ofstream f(probe);
    if (!f) throw UsageError("output directory " + dir.string() + " is not writable");
    f.close();
    fs::remove(probe, ec);
}

/// "output-nlayers=N" carries its layer count; other names map directly.
iorm::ModelConfig model_from_flag(const std::string& flag) {
    const auto eq = flag.find('=');
    const std::string name = flag.substr(0, eq);
    std::size_t layers = 0;
    if (eq != std::string::npos) {
        if (name != "output-nlayers") throw UsageError("only output-nlayers takes a layer count");
        try {
            layers = std::stoul(flag.substr(eq + 1));
        } catch (const std::exception&) {
            throw UsageError("bad layer count in '" + flag + "'");
        }
        if (layers == 0) throw UsageError("output-nlayers needs N >= 1");
    }
    return iorm::default_model_config(iorm::variant_from_string(name), layers);
}

// --- gen-data ----------------------------------------------------------------

struct GenArgs {
    std::string kind = "cd25";
    std::size_t categories = 5;
    std::size_t samples = 1000;
    std::size_t size = 32;
    std::uint64_t seed = 0;
    std::vector<std::string> corruptions;
    double train_fraction = 0.8;
    std::string relation = "permuted";
    std::string out;
};

void print_stats(const iorm::DatasetSpec& spec, const std::vector<iorm::PairSample>& samples) {
    std::size_t positives = 0;
    std::map<std::size_t, std::size_t> cats;
    for (const auto& s : samples) {
        positives += s.label;
        ++cats[spec.kind == iorm::DatasetKind::CD25_SYNTH ? s.category_in : s.category_out];
    }
    std::cout << "samples: " << samples.size() << " (train " << spec.train_count() << ", val "
              << samples.size() - spec.train_count() << ")\n";
    std::cout << "labels: valid " << positives << ", invalid " << samples.size() - positives << '\n';
    if (spec.kind == iorm::DatasetKind::CD25_SYNTH) {
        std::cout << "input categories:";
        for (const auto& [c, n] : cats) std::cout << ' ' << c << ':' << n;
    } else {
        std::cout << "corruptions:";
        for (const auto& [c, n] : cats)
            std::cout << ' ' << iorm::to_string(static_cast<iorm::Corruption>(c)) << ':' << n;
    }
    std::cout << '\n';
}

int cmd_gen_data(const GenArgs& a, const std::vector<std::string>& argv) {
    const std::string started = utc_now();
    iorm::DatasetSpec spec;
    spec.kind = iorm::dataset_kind_from_string(a.kind);
    spec.num_categories = a.categories;
    spec.num_samples = a.samples;
    spec.image_size = a.size;
    spec.master_seed = a.seed;
    spec.train_fraction = a.train_fraction;
    if (a.relation != "identity" && a.relation != "permuted") throw UsageError("--relation must be identity or permuted");
    spec.relation = a.relation == "identity" ? iorm::PairingRelation::Identity : iorm::PairingRelation::Permuted;
    if (!a.corruptions.empty()) {
        spec.corruption_menu.clear();
        for (const auto& c : a.corruptions) spec.corruption_menu.push_back(iorm::corruption_from_string(c));
    }
    spec.validate();
    const fs::path out(a.out);
    require_writable_dir(out.parent_path());
    if (spec.num_samples == 0) std::cerr << "warning: writing an empty dataset\n";

    const auto samples = iorm::generate_range(spec, 0, spec.num_samples);
    iorm::write_samples(out, spec.kind, spec.image_size, samples);
    write_json(fs::path(out.string() + ".manifest.json"),
               manifest("gen-data", argv, iorm::to_json(spec), spec.master_seed, started));
    std::cout << "wrote " << out.string() << '\n';
    print_stats(spec, samples);
    return 0;
}

// --- train -------------------------------------------------------------------

struct TrainArgs {
    std::string model = "io-v8";
    std::string data;
    std::size_t epochs = 30;
    std::string cyclic_shift = "off";
    std::uint64_t seed = 0;
    std::string out;
    std::string recipe = "desk";
    std::size_t batch_size = 32;
    std::optional<double> base_lr, min_lr, warmup_lr, weight_decay, mixup_alpha;
    std::optional<std::size_t> warmup_epochs;
    double train_fraction = 0.8;
    double stop_at_accuracy = 0.0;
    std::size_t stop_after = 0;
    std::string resume;
};

int cmd_train(const TrainArgs& a, const std::vector<std::string>& argv) {
    const std::string started = utc_now();
    iorm::ModelConfig mc = model_from_flag(a.model);
    if (a.cyclic_shift != "on" && a.cyclic_shift != "off") throw UsageError("--cyclic-shift-cross must be on or off");
    mc.cross.cyclic_shift = a.cyclic_shift == "on";
    mc.seed = a.seed;
    mc.validate();

    iorm::TrainConfig tc = a.recipe == "published" ? iorm::TrainConfig{} : iorm::desk_train_config();
    if (a.recipe != "published" && a.recipe != "desk") throw UsageError("--recipe must be desk or published");
    tc.total_epochs = a.epochs;
    tc.warmup_epochs = a.warmup_epochs.value_or(std::min(tc.warmup_epochs, iorm::default_warmup_epochs(a.epochs)));
    tc.batch_size = a.batch_size;
    tc.seed = a.seed;
    tc.stop_at_accuracy = a.stop_at_accuracy;
    if (a.base_lr) tc.base_lr = *a.base_lr;
    if (a.min_lr) tc.min_lr = *a.min_lr;
    if (a.warmup_lr) tc.warmup_lr = *a.warmup_lr;
    if (a.weight_decay) tc.weight_decay = *a.weight_decay;
    if (a.mixup_alpha) tc.mixup_alpha = *a.mixup_alpha;
    tc.validate();
    if (!(a.train_fraction > 0.0 && a.train_fraction < 1.0)) throw UsageError("--train-fraction must lie in (0, 1)");

    auto data = iorm::read_dataset(a.data);
    if (iorm::requires_pair(mc.variant) && data.header.output_only)
        throw UsageError("model " + iorm::to_string(mc.variant) + " needs input images, but " + a.data +
                         " holds outputs only");
    if (!iorm::requires_pair(mc.variant)) data.samples = iorm::strip_inputs(std::move(data.samples));
    auto split = iorm::split_samples(std::move(data.samples), a.train_fraction);
    if (split.train.size() < 2 || split.val.empty())
        throw UsageError("dataset too small to split into train and validation sets");

    const fs::path out(a.out);
    require_writable_dir(out);
    const Json config = {{"model", iorm::to_json(mc)},
                         {"train", iorm::to_json(tc)},
                         {"data",
                          {{"path", a.data},
                           {"kind", iorm::to_string(data.header.kind)},
                           {"count", data.header.count},
                           {"image_size", data.header.image_size},
                           {"output_only", data.header.output_only}}},
                         {"train_fraction", a.train_fraction}};

    iorm::RewardModel<float> model(mc);
    std::cout << iorm::to_string(mc.variant) << ": " << model.parameter_count() << " parameters, "
              << split.train.size() << " train / " << split.val.size() << " val\n";
    iorm::TrainOptions opts;
    opts.out_dir = out;
    if (!a.resume.empty()) opts.resume_from = fs::path(a.resume);
    opts.stop_after_epochs = a.stop_after;
    opts.on_epoch = [](const iorm::EpochRecord& e) {
        std::cout << "epoch " << e.epoch << "  loss " << std::fixed << std::setprecision(4) << e.train_loss
                  << "  val " << std::setprecision(2) << 100.0 * e.val_acc << "%  lr " << std::scientific
                  << std::setprecision(3) << e.lr << std::defaultfloat << std::endl;
    };
    const auto rep = iorm::train(model, split.train, split.val, tc, opts);

    Json m = manifest("train", argv, config, a.seed, started);
    m["result"] = {{"best_accuracy", rep.best_accuracy},
                   {"best_epoch", rep.best_epoch},
                   {"epochs_completed", rep.epochs_completed},
                   {"steps", rep.steps},
                   {"early_stopped", rep.early_stopped}};
    write_json(out / "manifest.json", m);
    std::cout << "best val accuracy " << std::fixed << std::setprecision(2) << 100.0 * rep.best_accuracy
              << "% at epoch " << rep.best_epoch << '\n';
    return 0;
}

// --- verify / eval / inspect ---------------------------------------------------

int cmd_verify(const std::string& scope, const std::string& csv) {
    const auto rep = iorm::verify::run_suite(iorm::verify::scope_from_string(scope));
    std::cout << rep.to_text();
    if (!csv.empty()) {
        const std::string s = rep.to_csv();
        iorm::write_file(csv, iorm::Bytes(s.begin(), s.end()));
    }
    return rep.all_passed() ? 0 : 1;
}

/// The model config recorded next to a checkpoint by `iorm train`.
iorm::ModelConfig config_for_checkpoint(const fs::path& ckpt, const std::string& explicit_manifest) {
    const fs::path m = explicit_manifest.empty() ? ckpt.parent_path() / "manifest.json" : fs::path(explicit_manifest);
    if (!fs::exists(m)) throw UsageError("no manifest.json beside " + ckpt.string() + "; pass --manifest");
    const auto bytes = iorm::read_file(m);
    Json j;
    try {
        j = Json::parse(bytes.begin(), bytes.end());
    } catch (const Json::exception& e) {
        throw iorm::FormatError(m.string() + ": " + e.what());
    }
    const Json& node = j.contains("config") ? j.at("config").at("model") : j;
    iorm::ModelConfig mc;
    iorm::from_json(node, mc);
    return mc;
}

int cmd_eval(const std::string& ckpt_path, const std::string& data_path, const std::string& manifest_path,
             std::size_t batch_size, double min_accuracy) {
    const auto ckpt = iorm::Checkpoint::load(ckpt_path);
    const auto mc = config_for_checkpoint(ckpt_path, manifest_path);
    iorm::RewardModel<float> model(mc);
    iorm::load_parameters(model, ckpt);
    auto data = iorm::read_dataset(data_path);
    if (iorm::requires_pair(mc.variant) && data.header.output_only)
        throw UsageError("model needs input images, but " + data_path + " holds outputs only");
    if (!iorm::requires_pair(mc.variant)) data.samples = iorm::strip_inputs(std::move(data.samples));
    const auto r = iorm::evaluate(model, data.samples, batch_size);
    std::cout << "accuracy " << std::fixed << std::setprecision(1) << 100.0 * r.accuracy << "% (" << r.correct << '/'
              << r.total << ")\n";
    std::cout << "confusion [true][pred]: [[" << r.confusion[0][0] << ", " << r.confusion[0][1] << "], ["
              << r.confusion[1][0] << ", " << r.confusion[1][1] << "]]\n";
    return r.accuracy >= min_accuracy ? 0 : 1;
}

int cmd_inspect(const std::string& ckpt_path) {
    const auto c = iorm::Checkpoint::load(ckpt_path);
    std::size_t scalars = 0;
    for (const auto& t : c.tensors) scalars += t.values.size();
    std::cout << "version " << c.version << "\nconfig sha256 " << iorm::hex(c.config_hash.data(), c.config_hash.size())
              << "\ntensors " << c.tensors.size() << " (" << scalars << " values)\n";
    for (const auto& t : c.tensors) std::cout << t.name << ' ' << iorm::shape_str(t.shape) << '\n';
    return 0;
}

} // namespace

int main(int argc, char** argv) {
    const std::vector<std::string> all_args(argv, argv + argc);
    CLI::App app{"Input/output reward models: data generation, training, evaluation and self-checks", "iorm"};
    app.require_subcommand(1);

    auto with_config = [](CLI::App* sub) {
        std::string unused;
        sub->add_option("--config", unused, "JSON file supplying any flag; command-line flags take precedence");
    };

    GenArgs gen;
    auto* g = app.add_subcommand("gen-data", "Generate a synthetic paired corpus");
    with_config(g);
    g->add_option("--kind", gen.kind, "cd25 or seg")->check(CLI::IsMember({"cd25", "seg"}));
    g->add_option("--categories", gen.categories, "texture categories (cd25)");
    g->add_option("--samples", gen.samples, "number of pairs");
    g->add_option("--size", gen.size, "image side in pixels");
    g->add_option("--seed", gen.seed, "master seed");
    g->add_option("--corruptions", gen.corruptions, "seg corruption menu")
        ->check(CLI::IsMember({"translate", "dilate-erode", "drop-shape", "phantom-shape", "threshold-noise"}));
    g->add_option("--train-fraction", gen.train_fraction, "fraction of the corpus used for training");
    g->add_option("--relation", gen.relation, "identity or permuted (cd25)");
    g->add_option("--out", gen.out, "dataset file")->required();

    TrainArgs tr;
    auto* t = app.add_subcommand("train", "Train a reward model");
    with_config(t);
    t->add_option("--model", tr.model, "io-v8, io-w12, output-base, output-nlayers=N, siamese, concat-baseline");
    t->add_option("--data", tr.data, "dataset file")->required();
    t->add_option("--epochs", tr.epochs);
    t->add_option("--cyclic-shift-cross", tr.cyclic_shift, "on or off")->check(CLI::IsMember({"on", "off"}));
    t->add_option("--seed", tr.seed);
    t->add_option("--out", tr.out, "output directory")->required();
    t->add_option("--recipe", tr.recipe, "desk (rates x50) or published")->check(CLI::IsMember({"desk", "published"}));
    t->add_option("--batch-size", tr.batch_size);
    t->add_option("--base-lr", tr.base_lr);
    t->add_option("--min-lr", tr.min_lr);
    t->add_option("--warmup-lr", tr.warmup_lr);
    t->add_option("--warmup-epochs", tr.warmup_epochs);
    t->add_option("--weight-decay", tr.weight_decay);
    t->add_option("--mixup-alpha", tr.mixup_alpha, "0 disables mixup");
    t->add_option("--train-fraction", tr.train_fraction);
    t->add_option("--stop-at-accuracy", tr.stop_at_accuracy, "stop once validation accuracy reaches this");
    t->add_option("--stop-after", tr.stop_after, "return after this many epochs (resume later with --resume)");
    t->add_option("--resume", tr.resume, "training checkpoint to continue from");

    std::string scope = "all", csv;
    auto* v = app.add_subcommand("verify", "Run the self-check suite");
    with_config(v);
    v->add_option("--scope", scope, "tensor, encoder, cross, models, schedule or all")
        ->check(CLI::IsMember({"tensor", "encoder", "cross", "models", "schedule", "all"}));
    v->add_option("--csv", csv, "also write the report as CSV");

    std::string ckpt, data, manifest_path;
    std::size_t eval_batch = 64;
    double min_accuracy = 0.0;
    auto* e = app.add_subcommand("eval", "Evaluate a checkpoint on a dataset");
    with_config(e);
    e->add_option("--ckpt", ckpt)->required();
    e->add_option("--data", data)->required();
    e->add_option("--manifest", manifest_path, "manifest.json or model-config JSON (default: beside the checkpoint)");
    e->add_option("--batch-size", eval_batch);
    e->add_option("--min-accuracy", min_accuracy, "exit 1 below this accuracy");

    std::string inspect_ckpt;
    auto* in = app.add_subcommand("inspect", "List a checkpoint's header and tensors");
    with_config(in);
    in->add_option("--ckpt", inspect_ckpt)->required();

    std::vector<std::string> args;
    try {
        args = expand_config(all_args);
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << '\n';
        return 2;
    }
    try {
        std::vector<std::string> reversed(args.rbegin(), args.rend() - 1);
        app.parse(reversed);
    } catch (const CLI::ParseError& err) {
        const int code = app.exit(err);
        return code == 0 ? 0 : 2;
    }

    try {
        if (g->parsed()) return cmd_gen_data(gen, all_args);
        if (t->parsed()) return cmd_train(tr, all_args);
        if (v->parsed()) return cmd_verify(scope, csv);
        if (e->parsed()) return cmd_eval(ckpt, data, manifest_path, eval_batch, min_accuracy);
        if (in->parsed()) return cmd_inspect(inspect_ckpt);
    } catch (const UsageError& err) {
        std::cerr << "usage error: " << err.what() << '\n';
        return 2;
    } catch (const iorm::ConfigError& err) {
        std::cerr << "usage error: " << err.what() << '\n';
        return 2;
    } catch (const iorm::ChecksumError& err) {
        std::cerr << "checksum error: " << err.what() << '\n';
        return 1;
    } catch (const std::exception& err) {
        std::cerr << "error: " << err.what() << '\n';
        return 1;
    }
    return 2;
}
