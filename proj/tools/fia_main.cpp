#include <iostream>
#include <string>
#include <vector>

#include <CLI11.hpp>

#include "fia/runner/experiment.hpp"

// fia: drive the inversion lab from the shell. Subcommands mirror the
// pipeline phases plus file-level attack/eval utilities and preset sweeps.
namespace {

using namespace fia;

// effective config = optional file + any --set key=value overrides (later
// lines win, so overrides are just appended)
runner::ExperimentConfig build_config(const std::string& config_path, const std::vector<std::string>& overrides) {
    std::string text = config_path.empty() ? "" : read_file_text(config_path);
    for (const auto& kv : overrides) text += "\n" + kv;
    runner::ExperimentConfig cfg = runner::parse_config_text(text);
    cfg.validate();
    return cfg;
}

int cmd_attack(const std::string& bundle_path, const std::string& features_dir, int steps, const std::string& out_dir) {
    attack::AttackBundle bundle = attack::AttackBundle::load(bundle_path);
    data::PairCorpus corpus = data::load_corpus(features_dir);
    std::string index = runner::write_inversions(bundle, corpus, steps, out_dir);
    std::cout << "wrote " << corpus.size() << " inversions to " << out_dir << " (" << index << ")\n";
    return 0;
}

int cmd_eval(const std::string& orig_dir, const std::string& recon_dir, const std::string& metrics,
             const std::string& describer_spec, const std::string& victim_ckpt, const std::string& extractor_ckpt,
             const std::string& taus_csv, const std::string& out_path) {
    data::PairCorpus corpus = data::load_corpus(orig_dir);
    eval::EvalInputs in;
    in.originals = corpus.images;
    in.inversions = runner::read_inversions(recon_dir);
    in.metas = corpus.manifest.scenes;
    in.metrics = eval::MetricSet::parse(metrics);
    in.provenance.corpus_manifest = corpus.manifest;
    nlohmann::json index = nlohmann::json::parse(read_file_text(recon_dir + "/index.json"));
    in.provenance.n_steps = index.value("n_steps", 1);

    victim::VictimModel model = victim_ckpt.empty() ? victim::VictimModel("small_cnn", "mid", 0)
                                                    : victim::VictimModel::load(victim_ckpt);
    if (!victim_ckpt.empty()) in.classifier = [&model](const TensorF& img) { return model.classify_full(img); };

    percep::FeatureExtractor extractor(0);
    if (!extractor_ckpt.empty()) {
        extractor = percep::FeatureExtractor::load(extractor_ckpt);
        in.extractor = &extractor;
    }

    if (!taus_csv.empty()) {
        in.orr_taus.clear();
        for (const auto& p : runner::detail::split_list(taus_csv))
            in.orr_taus.push_back(runner::detail::to_double("taus", p));
    }

    auto describer = runner::detail::make_describer(describer_spec, corpus);
    in.describer = describer.get();

    eval::EvalReport report = eval::run_eval(in);
    report.save_json(out_path);
    report.save_csv(out_path + ".csv");
    runner::SummaryTable tbl = runner::emit_summary({report});
    std::cout << tbl.text() << "report: " << out_path << "\n";
    return 0;
}

int cmd_run(const std::string& preset, const std::string& config_path, const std::vector<std::string>& overrides) {
    runner::ExperimentConfig base = build_config(config_path, overrides);
    std::vector<runner::ExperimentConfig> configs = runner::preset_configs(preset, base);
    std::vector<eval::EvalReport> reports;
    std::string combined;
    for (const auto& cfg : configs) {
        std::cout << "== config " << cfg.tag() << " ==\n";
        runner::ExperimentResult res = runner::run_experiment(cfg);
        for (auto& r : res.reports) reports.push_back(std::move(r));
        combined += cfg.hash();
    }
    runner::SummaryTable tbl = runner::emit_summary(reports);
    std::string stem = runner::cache_root(configs.front()) + "/summary-" + Sha256::hex(combined).substr(0, 12);
    write_file_text(stem + ".csv", tbl.csv());
    write_file_text(stem + ".txt", tbl.text());
    std::cout << "\n" << tbl.text() << "\nsummary: " << stem << ".csv\n";
    return 0;
}

}  // namespace

int main(int argc, char** argv) {
    CLI::App app{"feature-inversion attack lab for split DNNs"};
    app.require_subcommand(1);

    std::string config_path;
    std::vector<std::string> overrides;
    auto add_config_opts = [&](CLI::App* sub) {
        sub->add_option("--config", config_path, "config file (dotted key = value lines)");
        sub->add_option("--set", overrides, "override a config key, e.g. --set corpus.n_train=128");
    };

    CLI::App* collect = app.add_subcommand("collect", "train the victim and record (image, feature) corpora");
    add_config_opts(collect);
    CLI::App* codec = app.add_subcommand("train-codec", "train the attacker's image codec and perceptual net");
    add_config_opts(codec);

    CLI::App* train = app.add_subcommand("train", "train attack stages");
    add_config_opts(train);
    int stage = 0;
    train->add_option("--stage", stage, "1 = latent alignment, 2 = flow refinement")
        ->required()
        ->check(CLI::IsMember({1, 2}));

    CLI::App* atk = app.add_subcommand("attack", "invert recorded features with a saved bundle");
    std::string bundle_path, features_dir, atk_out;
    int atk_steps = 1;
    atk->add_option("--bundle", bundle_path, "attack bundle file")->required();
    atk->add_option("--features", features_dir, "corpus directory holding the features to invert")->required();
    atk->add_option("--steps", atk_steps, "sampler steps (default 1)");
    atk->add_option("--out", atk_out, "output directory for PNGs + index.json")->required();

    CLI::App* ev = app.add_subcommand("eval", "score inversions against their originals");
    std::string orig_dir, recon_dir, metrics = "psnr,ssim,perc,acc,lvlm,orr";
    std::string describer_spec = "mock", victim_ckpt, extractor_ckpt, taus_csv, report_out = "report.json";
    ev->add_option("--orig", orig_dir, "corpus directory with the original images")->required();
    ev->add_option("--recon", recon_dir, "inversion directory (PNGs + index.json)")->required();
    ev->add_option("--metrics", metrics, "comma list: psnr,ssim,perc,acc,lvlm,orr");
    ev->add_option("--describer", describer_spec, "mock | endpoint:<host>:<port>");
    ev->add_option("--victim", victim_ckpt, "victim checkpoint (needed for acc)");
    ev->add_option("--extractor", extractor_ckpt, "perceptual extractor checkpoint (needed for perc)");
    ev->add_option("--taus", taus_csv, "ORR IoU thresholds, comma list");
    ev->add_option("--out", report_out, "report JSON path");

    CLI::App* run = app.add_subcommand("run", "run a full experiment preset and summarize");
    add_config_opts(run);
    std::string preset = "baseline";
    run->add_option("--preset", preset, "baseline | defense | data-efficiency | steps");

    CLI::App* victims = app.add_subcommand("victims", "victim registry");
    victims->add_subcommand("list", "list victims and split points");

    CLI11_PARSE(app, argc, argv);

    try {
        if (collect->parsed())
            runner::run_experiment(build_config(config_path, overrides), std::cout, runner::Phase::collect);
        else if (codec->parsed())
            runner::run_experiment(build_config(config_path, overrides), std::cout, runner::Phase::train_codec);
        else if (train->parsed())
            runner::run_experiment(build_config(config_path, overrides), std::cout,
                                   stage == 1 ? runner::Phase::stage1 : runner::Phase::stage2);
        else if (atk->parsed())
            return cmd_attack(bundle_path, features_dir, atk_steps, atk_out);
        else if (ev->parsed())
            return cmd_eval(orig_dir, recon_dir, metrics, describer_spec, victim_ckpt, extractor_ckpt, taus_csv,
                            report_out);
        else if (run->parsed())
            return cmd_run(preset, config_path, overrides);
        else if (victims->parsed())
            std::cout << fia::victim::victims_list_text();
    } catch (const std::exception& e) {
        std::cerr << "error: " << e.what() << "\n";
        return 1;
    }
    return 0;
}
