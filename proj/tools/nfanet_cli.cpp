// SPDX-License-Identifier: Apache-2.0
//
// nfanet: command-line front end for the pipeline pieces and full runs.

#include <cmath>
#include <filesystem>
#include <fstream>
#include <iostream>
#include <map>
#include <set>
#include <string>
#include <vector>

#include <CLI11.hpp>
#include <json.hpp>

#include <nfanet/nfanet.hpp>

namespace fs = std::filesystem;
using namespace nfanet;

namespace {

nlohmann::json read_json(const std::string& path)
{
    std::ifstream in(path);
    if (!in) throw IoError("cannot open " + path);
    try {
        return nlohmann::json::parse(in);
    } catch (const nlohmann::json::exception& e) {
        throw ConfigError(path + ": " + e.what());
    }
}

void write_json(const nlohmann::json& j, const fs::path& path)
{
    std::ofstream out(path);
    if (!out) throw IoError("cannot write " + path.string());
    out << j.dump(2) << '\n';
}

// Top-level run-config keys that are not part of PipelineConfig.
const std::set<std::string> run_keys{"run_id", "corpus", "runs_dir"};

struct RunConfig {
    PipelineConfig pipeline;
    nlohmann::json raw;
};

RunConfig load_run_config(const std::string& path)
{
    RunConfig rc;
    if (!path.empty()) rc.raw = read_json(path);
    else rc.raw = nlohmann::json::object();
    rc.pipeline = pipeline_config_from_json(rc.raw, run_keys);
    return rc;
}

std::string pick(const std::string& flag, const nlohmann::json& raw, const char* key, const std::string& fallback = "")
{
    if (!flag.empty()) return flag;
    if (raw.contains(key)) return raw.at(key).get<std::string>();
    return fallback;
}

void print_scores(const std::string& what, const Scores& s)
{
    std::printf("%-28s mIoU %.4f  fgIoU %.4f  bgIoU %.4f  mDice %.4f\n", what.c_str(), s.miou, s.fg_iou, s.bg_iou, s.mdice);
}

// ---------------------------------------------------------------------------

struct SampleArgs {
    std::string input, out_dir;
    int k = 2;
    bool npy = false;
};

void run_sample(const SampleArgs& a)
{
    const auto image = io::read_image(a.input);
    const auto group = sample(image, SamplerConfig{a.k});
    fs::create_directories(a.out_dir);
    const std::string stem = fs::path(a.input).stem().string();
    for (int l = 0; l < group.size(); ++l) {
        const auto base = fs::path(a.out_dir) / (stem + "_n" + std::to_string(l + 1));
        if (a.npy) io::write_image_npy(group.members[l], base.string() + ".npy");
        else io::write_image_png(group.members[l], base.string() + ".png");
    }
    std::printf("wrote %d members of %dx%d\n", group.size(), group.members.front().height(), group.members.front().width());
}

struct ReassembleArgs {
    std::vector<std::string> members;
    std::string dir, stem, out;
    int k = 0;
};

void run_reassemble(ReassembleArgs a)
{
    if (a.members.empty()) {
        if (a.dir.empty() || a.stem.empty() || a.k < 1)
            throw ConfigError("reassemble: give --members, or --dir, --stem and --k");
        for (int l = 1; l <= a.k * a.k; ++l) {
            const auto base = fs::path(a.dir) / (a.stem + "_n" + std::to_string(l));
            a.members.push_back(fs::exists(base.string() + ".npy") ? base.string() + ".npy" : base.string() + ".png");
        }
    }
    const int k = static_cast<int>(std::lround(std::sqrt(double(a.members.size()))));
    if (k * k != static_cast<int>(a.members.size())) throw ConfigError("reassemble: member count must be a square");
    if (a.k > 0 && a.k != k) throw ConfigError("reassemble: --k disagrees with the member count");
    NeighborGroup group;
    group.k = k;
    for (const auto& m : a.members) group.members.push_back(io::read_image(m));
    group.source_shape = {group.members.front().height() * k, group.members.front().width() * k, group.members.front().channels()};
    const auto image = reassemble(group);
    if (io::has_extension(a.out, ".npy")) io::write_image_npy(image, a.out);
    else io::write_image_png(image, a.out);
}

struct AggregateArgs {
    std::string features, out, saliency_dir;
    int vote_threshold = 0;
};

void run_aggregate(const AggregateArgs& a)
{
    const auto stack = io::read_features_npy(a.features);
    const auto res = aggregate_detailed(stack, a.vote_threshold);
    io::write_mask_png(res.vote.mask, a.out);
    if (!a.saliency_dir.empty()) {
        fs::create_directories(a.saliency_dir);
        const auto saliency = cmax_pool(stack);
        for (int l = 0; l < saliency.members(); ++l) {
            const auto base = fs::path(a.saliency_dir) / ("saliency_n" + std::to_string(l + 1));
            io::write_map_png(saliency.maps[l], base.string() + ".png");
            io::write_mask_png(res.member_masks[l].mask, base.string() + "_otsu.png");
        }
    }
    std::printf("vote threshold %d of %d, %zu foreground pixels, %d degenerate members\n", res.vote.threshold_votes,
                stack.members(), count_foreground(res.vote.mask), res.degenerate_members);
}

struct PostprocessArgs {
    std::string mask, points, out;
    MorphConfig morph;
};

void run_postprocess(const PostprocessArgs& a)
{
    a.morph.validate();
    const auto mask = io::read_mask_png(a.mask);
    const auto points = load_points(a.points);
    points.validate(mask.rows(), mask.cols());
    const auto label = postprocess(mask, points, a.morph);
    io::write_mask_png(label.mask, a.out);
    std::printf("kept %d components, dropped %d\n", label.kept_components, label.dropped_components);
}

struct SynthesizeArgs {
    SyntheticConfig cfg;
    SplitFractions split;
    std::uint64_t split_seed = 7;
    std::string out_dir;
};

void run_synthesize(const SynthesizeArgs& a)
{
    auto corpus = synthesize(a.cfg);
    split_corpus(corpus, a.split, a.split_seed);
    write_corpus(corpus, a.out_dir);
    std::printf("wrote %zu tiles to %s\n", corpus.items.size(), (fs::path(a.out_dir) / "manifest.json").c_str());
}

struct TrainArgs {
    std::string config, corpus, out, init, labels_dir, log;
};

void run_train(const TrainArgs& a)
{
    const auto rc = load_run_config(a.config);
    const auto& cfg = rc.pipeline;
    const auto corpus = load_corpus(pick(a.corpus, rc.raw, "corpus"));
    std::vector<PreparedItem> items;
    for (const auto* item : corpus.select(Split::train)) items.push_back(prepare_item(*item, cfg));
    if (items.empty()) throw DataError("train: the corpus has no train items");

    std::unique_ptr<FeatureExtractor<float>> net = a.init.empty() ? build<float>(cfg.network) : load_checkpoint<float>(a.init);
    std::mt19937_64 rng(cfg.train.seed);
    StageLog stage_log;
    if (a.labels_dir.empty()) {
        stage_log = train_stage(*net, point_samples(items, cfg, rng), Supervision::point_positive_only, cfg.train, rng, "warmup");
    } else {
        std::vector<BinaryMask> labels;
        for (const auto& p : items) labels.push_back(io::read_mask_png((fs::path(a.labels_dir) / (p.item->id + ".png")).string()));
        stage_log = train_stage(*net, label_samples(items, labels, cfg), Supervision::dense, cfg.train, rng, "dense");
    }
    save_checkpoint(*net, a.out);
    if (!a.log.empty()) detail::write_stage_log(stage_log, a.log, RunMetadata{cfg.train.seed, 0, config_hash(cfg)});
    std::printf("%zu epochs, %ld steps, final loss %.6f\n", stage_log.epochs.size(), stage_log.total_steps,
                stage_log.epochs.empty() ? 0.0 : stage_log.epochs.back().mean_loss);
}

struct RecurseArgs {
    std::string config, corpus, run_id, runs_dir;
    int repeats = 1;
    bool no_test = false;
};

void run_recurse(const RecurseArgs& a)
{
    const auto rc = load_run_config(a.config);
    const auto corpus = load_corpus(pick(a.corpus, rc.raw, "corpus"));
    const fs::path run_dir = fs::path(pick(a.runs_dir, rc.raw, "runs_dir", "runs")) / pick(a.run_id, rc.raw, "run_id", "run");
    if (a.repeats < 1) throw ConfigError("recurse: --repeats must be >= 1");
    fs::create_directories(run_dir);

    std::vector<Scores> finals;
    for (int rep = 0; rep < a.repeats; ++rep) {
        auto cfg = rc.pipeline;
        cfg.train.seed += rep;
        cfg.network.seed += rep;
        const fs::path dir = a.repeats == 1 ? run_dir : run_dir / ("repeat" + std::to_string(rep));
        fs::create_directories(dir);
        auto j = to_json(cfg);
        j["config_hash"] = config_hash(cfg);
        write_json(j, dir / "config.json");
        RecursionOptions opt;
        opt.output_dir = dir;
        opt.evaluate_test = !a.no_test;
        const auto res = run_recursion(corpus, cfg, opt);
        for (const auto& r : res.rounds) {
            if (r.pseudo_label_quality) print_scores("round " + std::to_string(r.round_index) + " pseudo-labels", r.pseudo_label_quality->pooled);
            if (r.test_metrics) print_scores("round " + std::to_string(r.round_index) + " test", r.test_metrics->pooled);
            if (!r.constraint_satisfied) std::printf("round %d: point constraint violated\n", r.round_index);
        }
        if (res.rounds.back().test_metrics) finals.push_back(res.rounds.back().test_metrics->pooled);
    }
    if (a.repeats > 1 && !finals.empty()) {
        const auto sp = spread(finals);
        std::ofstream out(run_dir / "summary.csv");
        out << "statistic,bgIoU,fgIoU,mIoU,bgDice,fgDice,mDice\n";
        out << format_scores("mean", sp.mean) << '\n' << format_scores("std", sp.stddev) << '\n';
        std::printf("test mIoU %.4f +- %.4f over %d runs\n", sp.mean.miou, sp.stddev.miou, sp.runs);
    }
}

struct EvaluateArgs {
    std::string pred_dir, gt_dir, out;
};

void run_evaluate(const EvaluateArgs& a)
{
    std::vector<fs::path> gts;
    for (const auto& e : fs::directory_iterator(a.gt_dir))
        if (e.is_regular_file() && io::has_extension(e.path().string(), ".png")) gts.push_back(e.path());
    std::sort(gts.begin(), gts.end());
    std::vector<BinaryMask> preds, truths;
    std::vector<std::string> ids;
    for (const auto& g : gts) {
        const auto p = fs::path(a.pred_dir) / g.filename();
        if (!fs::exists(p)) throw DataError("evaluate: no prediction for " + g.filename().string());
        preds.push_back(io::read_mask_png(p.string()));
        truths.push_back(io::read_mask_png(g.string()));
        ids.push_back(g.stem().string());
    }
    const auto report = metrics(preds, truths, ids);
    write_metrics_csv(report, a.out);
    print_scores("pooled", report.pooled);
    print_scores("per-image mean", report.per_image_mean);
}

struct AblateArgs {
    std::string which, config, corpus, out_prefix;
    std::vector<int> ks{1, 2, 3, 4};
    int rounds = 3;
    bool with_recursion = false;
};

void run_ablate(const AblateArgs& a)
{
    const auto rc = load_run_config(a.config);
    const auto corpus = load_corpus(pick(a.corpus, rc.raw, "corpus"));
    AblationReport rep;
    if (a.which == "k") rep = ablation_k(corpus, a.ks, rc.pipeline);
    else if (a.which == "aggregation") rep = ablation_aggregation(corpus, rc.pipeline, a.with_recursion);
    else if (a.which == "recursion") rep = ablation_recursion(corpus, a.rounds, rc.pipeline);
    else throw ConfigError("ablations: unknown study '" + a.which + "'");
    if (!fs::path(a.out_prefix).parent_path().empty()) fs::create_directories(fs::path(a.out_prefix).parent_path());
    write_report_csv(rep, a.out_prefix + ".csv");
    write_report_json(rep, a.out_prefix + ".json");
    for (const auto& r : rep.rows) {
        std::string label;
        for (const auto& [k, v] : r.keys) label += k + "=" + v + " ";
        print_scores(label, r.scores);
    }
}

struct PredictArgs {
    std::string checkpoint, input, out, features_out;
    int k = 2;
};

void run_predict(const PredictArgs& a)
{
    const auto net = load_checkpoint<float>(a.checkpoint);
    PipelineConfig cfg;
    cfg.sampler.k = a.k;
    cfg.network = net->config();
    const auto image = io::read_image(a.input);
    if (!a.out.empty()) io::write_mask_png(predict_mask(*net, image, cfg), a.out);
    if (!a.features_out.empty()) {
        if (image.height() % (a.k * cfg.network.size_multiple()) || image.width() % (a.k * cfg.network.size_multiple()))
            throw ShapeError("predict: feature export needs extents divisible by " +
                             std::to_string(a.k * cfg.network.size_multiple()));
        io::write_features_npy(forward_group(*net, sample(image, cfg.sampler)), a.features_out);
    }
}

struct VisualizeArgs {
    std::string image, pred, gt, points, out;
};

void run_visualize(const VisualizeArgs& a)
{
    const auto image = io::read_image(a.image);
    const auto pred = io::read_mask_png(a.pred);
    std::optional<BinaryMask> gt;
    std::optional<PointLabelSet> points;
    if (!a.gt.empty()) gt = io::read_mask_png(a.gt);
    if (!a.points.empty()) points = load_points(a.points);
    io::write_image_png(visualize(image, pred, gt, points).rgb, a.out);
}

} // namespace

int main(int argc, char** argv)
{
    CLI::App app{"nfanet: point-supervised water-body segmentation"};
    app.require_subcommand(1);
    std::string level = "info";
    app.add_option("--log-level", level, "debug, info, warn, error or off")
        ->check(CLI::IsMember({"debug", "info", "warn", "error", "off"}));

    SampleArgs sa;
    auto* sample_cmd = app.add_subcommand("sample", "split an image into its K*K neighbour images");
    sample_cmd->add_option("--input", sa.input, "PNG or NPY image")->required()->check(CLI::ExistingFile);
    sample_cmd->add_option("--k", sa.k, "sampling factor")->check(CLI::PositiveNumber);
    sample_cmd->add_option("--out-dir", sa.out_dir)->required();
    sample_cmd->add_flag("--npy", sa.npy, "write float32 NPY members instead of PNG");

    ReassembleArgs ra;
    auto* reassemble_cmd = app.add_subcommand("reassemble", "inverse of sample");
    reassemble_cmd->add_option("--members", ra.members, "member files in order n1..nL");
    reassemble_cmd->add_option("--dir", ra.dir, "directory holding <stem>_n<l> files");
    reassemble_cmd->add_option("--stem", ra.stem);
    reassemble_cmd->add_option("--k", ra.k);
    reassemble_cmd->add_option("--out", ra.out)->required();

    AggregateArgs aa;
    auto* aggregate_cmd = app.add_subcommand("aggregate", "CMax, Otsu and vote over a neighbour feature stack");
    aggregate_cmd->add_option("--features", aa.features, "NPY array of shape H x W x C x L")->required()->check(CLI::ExistingFile);
    aggregate_cmd->add_option("--vote-threshold", aa.vote_threshold, "votes needed; 0 selects ceil(L/2)");
    aggregate_cmd->add_option("--out", aa.out)->required();
    aggregate_cmd->add_option("--saliency-dir", aa.saliency_dir, "dump per-member saliency and Otsu masks");

    PostprocessArgs pa;
    auto* post_cmd = app.add_subcommand("postprocess", "fill holes, open, keep point-touching components");
    post_cmd->add_option("--mask", pa.mask)->required()->check(CLI::ExistingFile);
    post_cmd->add_option("--points", pa.points)->required()->check(CLI::ExistingFile);
    post_cmd->add_option("--open-radius", pa.morph.open_radius);
    post_cmd->add_option("--max-hole-area", pa.morph.max_hole_area);
    post_cmd->add_option("--connectivity", pa.morph.connectivity)->check(CLI::IsMember({4, 8}));
    post_cmd->add_option("--out", pa.out)->required();

    SynthesizeArgs ya;
    auto* syn_cmd = app.add_subcommand("synthesize", "generate a synthetic water-body corpus");
    syn_cmd->add_option("--out-dir", ya.out_dir)->required();
    syn_cmd->add_option("--n-images", ya.cfg.n_images);
    syn_cmd->add_option("--rows", ya.cfg.rows);
    syn_cmd->add_option("--cols", ya.cfg.cols);
    syn_cmd->add_option("--min-blobs", ya.cfg.min_blobs);
    syn_cmd->add_option("--max-blobs", ya.cfg.max_blobs);
    syn_cmd->add_option("--min-radius", ya.cfg.min_radius);
    syn_cmd->add_option("--max-radius", ya.cfg.max_radius);
    syn_cmd->add_option("--water-mean", ya.cfg.water_mean)->expected(3);
    syn_cmd->add_option("--water-std", ya.cfg.water_std);
    syn_cmd->add_option("--background-mean", ya.cfg.background_mean)->expected(3);
    syn_cmd->add_option("--background-std", ya.cfg.background_std);
    syn_cmd->add_option("--background-variation", ya.cfg.background_variation);
    syn_cmd->add_option("--noise-std", ya.cfg.noise_std);
    syn_cmd->add_option("--seed", ya.cfg.seed);
    syn_cmd->add_option("--train-fraction", ya.split.train);
    syn_cmd->add_option("--val-fraction", ya.split.val);
    syn_cmd->add_option("--test-fraction", ya.split.test);
    syn_cmd->add_option("--split-seed", ya.split_seed);

    TrainArgs ta;
    auto* train_cmd = app.add_subcommand("train", "one training stage: point warm-up, or dense with --labels-dir");
    train_cmd->add_option("--config", ta.config, "JSON run config");
    train_cmd->add_option("--corpus", ta.corpus, "manifest.json (overrides the config)");
    train_cmd->add_option("--checkpoint", ta.out, "output checkpoint")->required();
    train_cmd->add_option("--init", ta.init, "start from this checkpoint")->check(CLI::ExistingFile);
    train_cmd->add_option("--labels-dir", ta.labels_dir, "dense labels <id>.png for the train split");
    train_cmd->add_option("--log", ta.log, "epoch log output");

    RecurseArgs rca;
    auto* recurse_cmd = app.add_subcommand("recurse", "warm-up, aggregation and recursive retraining");
    recurse_cmd->add_option("--config", rca.config, "JSON run config");
    recurse_cmd->add_option("--corpus", rca.corpus, "manifest.json (overrides the config)");
    recurse_cmd->add_option("--run-id", rca.run_id);
    recurse_cmd->add_option("--runs-dir", rca.runs_dir);
    recurse_cmd->add_option("--repeats", rca.repeats, "independent seeded runs; reports mean and std");
    recurse_cmd->add_flag("--no-test", rca.no_test, "skip test-split evaluation");

    EvaluateArgs ea;
    auto* eval_cmd = app.add_subcommand("evaluate", "IoU/Dice of predicted masks against ground truth");
    eval_cmd->add_option("--pred-dir", ea.pred_dir)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--gt-dir", ea.gt_dir)->required()->check(CLI::ExistingDirectory);
    eval_cmd->add_option("--out", ea.out)->required();

    AblateArgs aba;
    auto* ablate_cmd = app.add_subcommand("ablations", "ablation studies: k, aggregation or recursion");
    ablate_cmd->add_option("study", aba.which)->required()->check(CLI::IsMember({"k", "aggregation", "recursion"}));
    ablate_cmd->add_option("--config", aba.config, "JSON run config");
    ablate_cmd->add_option("--corpus", aba.corpus);
    ablate_cmd->add_option("--out-prefix", aba.out_prefix, "writes <prefix>.csv and <prefix>.json")->required();
    ablate_cmd->add_option("--ks", aba.ks)->delimiter(',');
    ablate_cmd->add_option("--rounds", aba.rounds);
    ablate_cmd->add_flag("--with-recursion", aba.with_recursion);

    PredictArgs pra;
    auto* predict_cmd = app.add_subcommand("predict", "segment one image with a checkpoint");
    predict_cmd->add_option("--checkpoint", pra.checkpoint)->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--input", pra.input)->required()->check(CLI::ExistingFile);
    predict_cmd->add_option("--k", pra.k)->check(CLI::PositiveNumber);
    predict_cmd->add_option("--out", pra.out, "mask PNG");
    predict_cmd->add_option("--features-out", pra.features_out, "neighbour feature stack as NPY");

    VisualizeArgs va;
    auto* vis_cmd = app.add_subcommand("visualize", "boundary overlay of prediction, ground truth and points");
    vis_cmd->add_option("--image", va.image)->required()->check(CLI::ExistingFile);
    vis_cmd->add_option("--pred", va.pred)->required()->check(CLI::ExistingFile);
    vis_cmd->add_option("--gt", va.gt);
    vis_cmd->add_option("--points", va.points);
    vis_cmd->add_option("--out", va.out)->required();

    CLI11_PARSE(app, argc, argv);
    static const std::map<std::string, LogLevel> levels{{"debug", LogLevel::debug}, {"info", LogLevel::info},
                                                        {"warn", LogLevel::warn},   {"error", LogLevel::error},
                                                        {"off", LogLevel::off}};
    log_level() = levels.at(level);

    try {
        if (*sample_cmd) run_sample(sa);
        else if (*reassemble_cmd) run_reassemble(ra);
        else if (*aggregate_cmd) run_aggregate(aa);
        else if (*post_cmd) run_postprocess(pa);
        else if (*syn_cmd) run_synthesize(ya);
        else if (*train_cmd) run_train(ta);
        else if (*recurse_cmd) run_recurse(rca);
        else if (*eval_cmd) run_evaluate(ea);
        else if (*ablate_cmd) run_ablate(aba);
        else if (*predict_cmd) run_predict(pra);
        else if (*vis_cmd) run_visualize(va);
    } catch (const ConfigError& e) {
        std::cerr << "config error: " << e.what() << '\n';
        return 2;
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << '\n';
        return 1;
    }
    return 0;
}
