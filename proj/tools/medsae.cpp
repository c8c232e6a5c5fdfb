// Pipeline driver: synth | train | analyze | name | detect | report.
// Exit codes: 0 success, 2 config/validation error, 3 runtime numerical
// failure, 4 endpoint failure.

#include <cstdio>
#include <exception>
#include <string>

#include "medsae/pipeline.hpp"

#include "CLI11.hpp"

using medsae::pipeline::PipelineConfig;

namespace {

void print_synth_summary(const medsae::pipeline::SynthStageResult& r,
                         const PipelineConfig& cfg) {
    std::printf("synth: wrote %zu file(s) under %s\n", r.files_written,
                r.paths.synth_dir.string().c_str());
    std::printf("  d=%zu true_features=%zu labels=%zu samples=%zu sparsity=%.2f noise=%.4f\n",
                cfg.synth.d, r.ground_truth.t, r.ground_truth.k, r.n,
                r.ground_truth.sparsity, cfg.synth.noise_sigma);
    std::vector<std::size_t> owned(r.ground_truth.k, 0);
    for (std::size_t label : r.ground_truth.feature_labels) ++owned[label];
    std::printf("  features per label:");
    for (std::size_t c : owned) std::printf(" %zu", c);
    std::printf("\n");
}

void print_train_summary(const medsae::pipeline::TrainStageResult& r) {
    std::printf("train: d=%zu m=%zu epochs=%zu\n", r.d, r.m, r.report.epochs.size());
    if (!r.report.epochs.empty()) {
        const auto& last = r.report.epochs.back();
        std::printf("  final epoch loss: total=%.6g reconstruction=%.6g sparsity=%.6g\n",
                    last.loss.total, last.loss.reconstruction, last.loss.sparsity);
    }
    std::printf("  l0_rate=%.6f fve=%.6f dead_fraction=%.4f wall_time=%.1fs\n",
                r.report.l0_rate, r.report.fve, r.report.dead_fraction,
                r.report.wall_time_s);
    std::printf("  checkpoint: %s\n", r.paths.checkpoint.string().c_str());
}

} // namespace

int main(int argc, char** argv) {
    CLI::App app{"single-layer ReLU sparse autoencoder toolkit"};
    app.require_subcommand(1);
    app.fallthrough(); // accept global flags after the subcommand name

    std::string config_path, output_dir, mock;
    std::uint64_t seed = 0;
    app.add_option("--config", config_path, "pipeline config JSON");
    auto* seed_opt = app.add_option("--seed", seed, "root seed (overrides config)");
    auto* output_opt = app.add_option("--output", output_dir, "output directory (overrides config)");
    auto* mock_opt =
        app.add_option("--mock", mock, "VLM mock mode: oracle | random | scripted:PATH");

    std::string checkpoint, profiles, findings_in, findings_out;
    double threshold = -1.0;

    auto* cmd_synth = app.add_subcommand("synth", "generate a synthetic dataset");
    auto* cmd_train = app.add_subcommand("train", "fit normalization and train the autoencoder");
    auto* cmd_analyze = app.add_subcommand("analyze", "profile neurons against labels");
    cmd_analyze->add_option("--checkpoint", checkpoint, "checkpoint path override");
    auto* cmd_name = app.add_subcommand("name", "name neurons and validate by detection");
    cmd_name->add_option("--checkpoint", checkpoint, "checkpoint path override");
    cmd_name->add_option("--profiles", profiles, "profiles path override");
    auto* cmd_detect = app.add_subcommand("detect", "re-run detection for existing findings");
    cmd_detect->add_option("--checkpoint", checkpoint, "checkpoint path override");
    cmd_detect->add_option("--findings", findings_in, "findings to re-validate");
    cmd_detect->add_option("--out", findings_out, "output findings path");
    auto* cmd_report = app.add_subcommand("report", "render the ranked findings table");
    cmd_report->add_option("--findings", findings_in, "findings path override");
    auto* threshold_opt =
        cmd_report->add_option("--threshold", threshold, "accuracy cutoff override");

    CLI11_PARSE(app, argc, argv);

    try {
        PipelineConfig cfg;
        if (!config_path.empty()) cfg = medsae::pipeline::load_config(config_path);
        if (seed_opt->count()) cfg.seed = seed;
        if (output_opt->count()) cfg.output_dir = output_dir;
        if (mock_opt->count()) cfg.naming.mock = mock;
        if (threshold_opt->count()) cfg.naming.threshold = threshold;

        if (cmd_synth->parsed()) {
            auto r = medsae::pipeline::run_synth(cfg);
            print_synth_summary(r, cfg);
        } else if (cmd_train->parsed()) {
            auto r = medsae::pipeline::run_train(cfg);
            print_train_summary(r);
        } else if (cmd_analyze->parsed()) {
            auto r = medsae::pipeline::run_analyze(cfg, checkpoint);
            std::printf("%s\n", r.summary.dump(2).c_str());
            std::printf("analyze: wrote %s\n", r.paths.summary.string().c_str());
        } else if (cmd_name->parsed()) {
            auto r = medsae::pipeline::run_name(cfg, {}, checkpoint, profiles);
            std::printf("name: named=%zu resumed=%zu skipped=%zu -> %s\n", r.named,
                        r.resumed, r.skipped, r.paths.findings.string().c_str());
        } else if (cmd_detect->parsed()) {
            auto paths = medsae::pipeline::stage_paths(cfg);
            std::filesystem::path in =
                findings_in.empty() ? paths.findings : std::filesystem::path(findings_in);
            std::filesystem::path out =
                findings_out.empty() ? paths.name_dir / "findings_detect.jsonl"
                                     : std::filesystem::path(findings_out);
            auto r = medsae::pipeline::run_detect(cfg, {}, in, out, checkpoint);
            std::printf("detect: re-validated %zu finding(s) -> %s\n", r.detected,
                        r.findings_out.string().c_str());
        } else if (cmd_report->parsed()) {
            auto r = medsae::pipeline::run_report(cfg, findings_in);
            std::printf("%s", r.rendered.c_str());
            std::printf("report: %s\n", r.paths.report_csv.string().c_str());
        }
        return 0;
    } catch (const medsae::ConfigError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 2;
    } catch (const medsae::EndpointError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 4;
    } catch (const medsae::NumericError& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const medsae::Error& e) {
        std::fprintf(stderr, "error: %s\n", e.what());
        return 3;
    } catch (const std::exception& e) {
        std::fprintf(stderr, "unexpected error: %s\n", e.what());
        return 1;
    }
}
