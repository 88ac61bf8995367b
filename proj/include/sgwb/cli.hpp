#pragma once

// Command-line pipeline: data generation, the two training stages, the proxy
// segmenter, evaluation, and numeric self-checks, each as one reproducible
// command. Every command records provenance (config hash, seed, artifact
// hashes) next to its outputs.

#include <algorithm>
#include <cinttypes>
#include <cmath>
#include <cstdio>
#include <filesystem>
#include <map>
#include <memory>
#include <string>
#include <vector>

#include <json.hpp>

#include "sgwb/checkpoint.hpp"
#include "sgwb/config.hpp"
#include "sgwb/evalkit.hpp"
#include "sgwb/gradcheck.hpp"
#include "sgwb/semalign.hpp"
#include "sgwb/train.hpp"

namespace sgwb {

struct CliRequest {
    std::string command;
    std::string out = ".";
    Config cfg = default_config();
    uint64_t seed = 0; // resolved from train.seed unless --seed was given
};

namespace cli_detail {

inline std::string path_join(const std::string& dir, const std::string& name) {
    if (dir.empty() || dir == ".") return name;
    return dir + "/" + name;
}

inline bool file_exists(const std::string& path) {
    std::error_code ec;
    return std::filesystem::exists(path, ec);
}

inline std::string case_stem(size_t idx) {
    char buf[32];
    std::snprintf(buf, sizeof buf, "case_%03zu", idx);
    return buf;
}

inline const std::array<const char*, 6> kCaseSuffix{"mr_ip.vol", "mr_op.vol", "ct.vol",
                                                    "activity.vol", "labels.lbl", "gt.fld"};

inline std::vector<std::string> case_files(size_t idx) {
    std::vector<std::string> out;
    for (const char* s : kCaseSuffix) out.push_back(case_stem(idx) + "_" + s);
    return out;
}

// Provenance record: one per command, named run_<command>.json.
inline void write_run_record(const CliRequest& rq,
                             const std::map<std::string, std::string>& artifacts,
                             const std::map<std::string, double>& results) {
    nlohmann::json j;
    j["command"] = rq.command;
    j["config_hash"] = hex64(config_hash(rq.cfg));
    j["seed"] = rq.seed;
    j["artifacts"] = artifacts;
    j["results"] = results;
    std::string name = "run_" + rq.command + ".json";
    for (auto& ch : name)
        if (ch == '-') ch = '_';
    const std::string path = path_join(rq.out, name);
    std::FILE* f = std::fopen(path.c_str(), "w");
    if (!f) throw ArtifactError("cannot write provenance record: " + path);
    const std::string text = j.dump(2) + "\n";
    std::fwrite(text.data(), 1, text.size(), f);
    std::fclose(f);
}

inline PhantomCase load_case(const std::string& dir, size_t idx) {
    const std::string stem = path_join(dir, case_stem(idx));
    PhantomCase pc;
    pc.mr_ip = read_volume(stem + "_mr_ip.vol");
    pc.mr_op = read_volume(stem + "_mr_op.vol");
    pc.ct = read_volume(stem + "_ct.vol");
    pc.activity = read_volume(stem + "_activity.vol");
    pc.labels = read_labels(stem + "_labels.lbl");
    pc.gt_field = read_field(stem + "_gt.fld");
    pc.size = pc.ct.shape.d;
    return pc;
}

// Counts cases recorded in the manifest and verifies the files still exist.
inline size_t manifest_cases(const std::string& dir) {
    const std::string mpath = path_join(dir, "manifest.tsv");
    std::FILE* f = std::fopen(mpath.c_str(), "rb");
    if (!f) throw ArtifactError("missing data manifest: " + mpath + " (run gen-data first)");
    std::string text;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
    std::fclose(f);
    size_t rows = 0, pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        const std::string line = text.substr(pos, nl - pos);
        pos = nl + 1;
        if (line.empty() || line.front() == '#') continue;
        const size_t tab = line.find('\t');
        if (tab == std::string::npos)
            throw InputError("manifest line without a hash column: " + line);
        const std::string file = line.substr(0, tab);
        if (!file_exists(path_join(dir, file)))
            throw ArtifactError("manifest names a missing file: " + file);
        ++rows;
    }
    if (rows == 0 || rows % kCaseSuffix.size() != 0)
        throw InputError("manifest row count is not a whole number of cases");
    return rows / kCaseSuffix.size();
}

struct Split {
    std::vector<PhantomCase> train, holdout;
};

inline Split load_split(const std::string& dir, int64_t holdout) {
    const size_t n = manifest_cases(dir);
    if (holdout < 0 || size_t(holdout) >= n)
        throw InputError("data.holdout must leave at least one training case");
    Split sp;
    for (size_t i = 0; i < n; ++i) {
        PhantomCase pc = load_case(dir, i);
        if (i < n - size_t(holdout))
            sp.train.push_back(std::move(pc));
        else
            sp.holdout.push_back(std::move(pc));
    }
    return sp;
}

inline void require_artifact(const std::string& path, const std::string& what) {
    if (!file_exists(path))
        throw ArtifactError(what + " not found: " + path);
}

inline RegConfig reg_config(const Config& c) {
    RegConfig r;
    r.batch = int(c.get_int("train.batch"));
    r.lr = c.get_double("train.lr_reg");
    r.lambda_smooth = c.get_double("losses.lambda");
    r.pairs = int(c.get_int("losses.pairs"));
    r.critic_inner = int(c.get_int("train.critic_inner"));
    r.warmup = int(c.get_int("train.warmup"));
    r.exclusion_radius = int(c.get_int("losses.exclusion_radius"));
    r.exclude_sliding = c.get_bool("losses.exclude_sliding");
    r.aug.prob = float(c.get_double("train.aug_p"));
    return r;
}

inline SynConfig syn_config(const Config& c) {
    SynConfig s;
    s.lr = c.get_double("train.lr_syn");
    s.w_l1 = c.get_double("losses.w_l1");
    s.w_edge = c.get_double("losses.w_edge");
    s.w_adv = c.get_double("losses.w_adv");
    s.w_sem = c.get_double("losses.w_sem");
    s.feats_per_organ = int(c.get_int("losses.feats_per_organ"));
    s.tau = float(c.get_double("losses.tau"));
    s.canny_sigma = c.get_double("losses.canny_sigma");
    s.canny_lo = float(c.get_double("losses.canny_lo"));
    s.canny_hi = float(c.get_double("losses.canny_hi"));
    s.use_reg = c.get_bool("losses.use_reg");
    s.use_edge = c.get_bool("losses.use_edge");
    s.use_adv = c.get_bool("losses.use_adv");
    s.use_sem = c.get_bool("losses.use_sem");
    s.aug.prob = float(c.get_double("train.aug_p"));
    return s;
}

// ---------------------------------------------------------------------------
// Commands
// ---------------------------------------------------------------------------

inline int cmd_gen_data(const CliRequest& rq) {
    const int64_t n = rq.cfg.get_int("data.n");
    const int64_t size = rq.cfg.get_int("data.size");
    const double magnitude = rq.cfg.get_double("data.magnitude");
    const double slip = rq.cfg.get_double("data.slip");
    if (n < 1) throw InputError("data.n must be at least 1");

    std::map<std::string, std::string> artifacts;
    std::vector<std::pair<std::string, std::string>> rows;
    for (int64_t i = 0; i < n; ++i) {
        PhantomCase pc = generate_phantom(rq.seed + uint64_t(i), uint32_t(size), magnitude,
                                          slip);
        const std::string stem = path_join(rq.out, case_stem(size_t(i)));
        write_volume(pc.mr_ip, stem + "_mr_ip.vol");
        write_volume(pc.mr_op, stem + "_mr_op.vol");
        write_volume(pc.ct, stem + "_ct.vol");
        write_volume(pc.activity, stem + "_activity.vol");
        write_labels(pc.labels, stem + "_labels.lbl");
        write_field(pc.gt_field, stem + "_gt.fld");
        for (const auto& name : case_files(size_t(i))) {
            const std::string h = hex64(hash_file(path_join(rq.out, name)));
            rows.emplace_back(name, h);
            artifacts[name] = h;
        }
    }

    const std::string mpath = path_join(rq.out, "manifest.tsv");
    std::FILE* f = std::fopen(mpath.c_str(), "w");
    if (!f) throw ArtifactError("cannot write manifest: " + mpath);
    std::fprintf(f, "# cases=%" PRId64 " size=%" PRId64 " magnitude=%g slip=%g seed=%" PRIu64
                    "\n",
                 n, size, magnitude, slip, rq.seed);
    for (const auto& [name, h] : rows) std::fprintf(f, "%s\t%s\n", name.c_str(), h.c_str());
    std::fclose(f);
    artifacts["manifest.tsv"] = hex64(hash_file(mpath));

    write_run_record(rq, artifacts, {{"cases", double(n)}});
    std::printf("gen-data: %" PRId64 " cases of %" PRId64 "^3 under %s\n", n, size,
                rq.out.c_str());
    return 0;
}

inline int cmd_train_seg(const CliRequest& rq) {
    Split sp = load_split(rq.out, rq.cfg.get_int("data.holdout"));
    Rng rng(rq.seed);
    ProxySegmenter<float> seg;
    seg.f = rq.cfg.get_int("nets.seg_features");
    ParamStore<float> ps;
    seg.register_params(ps, rng);

    std::vector<const PhantomCase*> ptrs;
    for (const auto& pc : sp.train) ptrs.push_back(&pc);
    SegTrainResult res = train_proxy_segmenter(seg, ps, ptrs,
                                               int(rq.cfg.get_int("train.seg_steps")),
                                               rq.cfg.get_double("train.lr_seg"), rq.seed);
    if (!std::isfinite(res.last_loss))
        throw NumericError("segmenter loss went non-finite: " + std::to_string(res.last_loss));

    TrainState st;
    st.step = res.steps;
    st.epoch = 1;
    st.rng = rng.save();
    const std::string ckpt = path_join(rq.out, "seg.ckpt");
    save_checkpoint(ckpt, ps, &st);
    write_run_record(rq, {{"seg.ckpt", hex64(hash_file(ckpt))}},
                     {{"first_loss", res.first_loss},
                      {"last_loss", res.last_loss},
                      {"mean_dice", res.mean_dice}});
    std::printf("train-seg: loss %.4f -> %.4f, mean dice %.3f\n", res.first_loss,
                res.last_loss, res.mean_dice);
    return 0;
}

inline int cmd_train_reg(const CliRequest& rq) {
    Split sp = load_split(rq.out, rq.cfg.get_int("data.holdout"));
    RegConfig cfg = reg_config(rq.cfg);
    const int64_t epochs = rq.cfg.get_int("train.epochs_reg");

    std::vector<TrainCase> train;
    for (const auto& pc : sp.train) train.push_back(case_from_phantom(pc));
    std::vector<TrainCase> holdout;
    for (const auto& pc : sp.holdout) holdout.push_back(case_from_phantom(pc));

    Rng rng(rq.seed);
    RegistrationNet<float> rnet;
    rnet.f = rq.cfg.get_int("nets.reg_features");
    rnet.out_gain = float(rq.cfg.get_double("nets.reg_gain"));
    ParamStore<float> rp;
    rnet.register_params(rp, rng);
    MineCritic<float> critic;
    critic.width = rq.cfg.get_int("nets.mine_width");
    ParamStore<float> mp;
    critic.register_params(mp, rng);
    Adam<float> ropt, mopt;
    ropt.lr = cfg.lr;
    mopt.lr = rq.cfg.get_double("train.lr_critic");

    registration_warmup(critic, mp, mopt, train, cfg, cfg.warmup, rng);

    TrainLogger log(path_join(rq.out, "reg_log.tsv"), {"epoch", "iter", "bound", "smooth",
                                                       "total"});
    const int64_t iters = std::max<int64_t>(1, int64_t(train.size()) / cfg.batch);
    int64_t gstep = 0;
    for (int64_t e = 0; e < epochs; ++e) {
        for (int64_t it = 0; it < iters; ++it, ++gstep) {
            RegStepStats st =
                registration_batch_step(rnet, rp, ropt, critic, mp, mopt, train, cfg, rng);
            if (!std::isfinite(st.total))
                throw NumericError("registration loss non-finite: bound=" +
                                   std::to_string(st.bound) +
                                   " smooth=" + std::to_string(st.smooth));
            log.row(gstep, {double(e), double(it), st.bound, st.smooth, st.total});
        }
        TrainState st;
        st.step = gstep;
        st.epoch = e + 1;
        st.rng = rng.save();
        save_checkpoint(path_join(rq.out, "reg.ckpt"), rp, &st);
        save_checkpoint(path_join(rq.out, "mine.ckpt"), mp, nullptr);
    }

    double epe_zero = 0, epe_net = 0;
    const auto& evalset = holdout.empty() ? train : holdout;
    for (const auto& tc : evalset) {
        epe_zero += identity_epe(tc);
        epe_net += registration_epe(rnet, rp, tc);
    }
    epe_zero /= double(evalset.size());
    epe_net /= double(evalset.size());

    write_run_record(rq,
                     {{"reg.ckpt", hex64(hash_file(path_join(rq.out, "reg.ckpt")))},
                      {"mine.ckpt", hex64(hash_file(path_join(rq.out, "mine.ckpt")))},
                      {"reg_log.tsv", hex64(hash_file(path_join(rq.out, "reg_log.tsv")))}},
                     {{"epe_zero", epe_zero},
                      {"epe_net", epe_net},
                      {"holdout", double(sp.holdout.size())}});
    std::printf("train-reg: %" PRId64 " epochs, holdout epe %.4f (zero field %.4f)\n", epochs,
                epe_net, epe_zero);
    return 0;
}

inline int cmd_train_syn(const CliRequest& rq) {
    Split sp = load_split(rq.out, rq.cfg.get_int("data.holdout"));
    SynConfig cfg = syn_config(rq.cfg);
    const int64_t epochs = rq.cfg.get_int("train.epochs_syn");

    Rng rng(rq.seed);
    RegistrationNet<float> rnet;
    rnet.f = rq.cfg.get_int("nets.reg_features");
    rnet.out_gain = float(rq.cfg.get_double("nets.reg_gain"));
    ParamStore<float> rp;
    ProxySegmenter<float> seg;
    seg.f = rq.cfg.get_int("nets.seg_features");
    ParamStore<float> spstore;
    {
        Rng init(rq.seed + 17);
        rnet.register_params(rp, init);
        seg.register_params(spstore, init);
    }
    if (cfg.use_reg) {
        const std::string rpath = path_join(rq.out, "reg.ckpt");
        require_artifact(rpath, "registration checkpoint (run train-reg first)");
        load_checkpoint(rpath, rp, nullptr);
    }
    if (cfg.use_sem) {
        const std::string spath = path_join(rq.out, "seg.ckpt");
        require_artifact(spath, "segmenter checkpoint (run train-seg first)");
        load_checkpoint(spath, spstore, nullptr);
    }
    const uint64_t reg_hash_before = rp.content_hash();

    SynthesisNet<float> gnet;
    gnet.f = rq.cfg.get_int("nets.syn_features");
    ParamStore<float> gp;
    gnet.register_params(gp, rng);
    PatchDiscriminator<float> dnet;
    dnet.f = rq.cfg.get_int("nets.dis_features");
    ParamStore<float> dp;
    dnet.register_params(dp, rng);
    Adam<float> gopt, dopt;
    gopt.lr = cfg.lr;
    dopt.lr = cfg.lr;

    std::vector<TrainCase> train;
    for (const auto& pc : sp.train) train.push_back(case_from_phantom(pc));
    std::vector<TrainCase> holdout;
    for (const auto& pc : sp.holdout) holdout.push_back(case_from_phantom(pc));
    const auto& evalset = holdout.empty() ? train : holdout;

    auto holdout_psnr = [&]() {
        double acc = 0;
        for (const auto& tc : evalset) {
            Volume ialign = alignment_target(cfg, cfg.use_reg ? &rnet : nullptr,
                                             cfg.use_reg ? &rp : nullptr, tc);
            SynthOut so = synthesize(gnet, gp, tc.mr_ip, tc.mr_op);
            acc += psnr(ialign, so.ct_norm, body_mask(tc.labels));
        }
        return acc / double(evalset.size());
    };

    const double psnr_before = holdout_psnr();

    TrainLogger log(path_join(rq.out, "syn_log.tsv"),
                    {"epoch", "iter", "total", "l1", "edge", "adv", "sem", "d_loss"});
    std::vector<size_t> order(train.size(), 0);
    for (size_t i = 0; i < order.size(); ++i) order[i] = i;
    int64_t gstep = 0;
    for (int64_t e = 0; e < epochs; ++e) {
        rng.shuffle(order);
        for (size_t it = 0; it < order.size(); ++it, ++gstep) {
            SynStepStats st = synthesis_step(gnet, gp, gopt, dnet, dp, dopt,
                                             cfg.use_reg ? &rnet : nullptr,
                                             cfg.use_reg ? &rp : nullptr,
                                             cfg.use_sem ? &seg : nullptr,
                                             cfg.use_sem ? &spstore : nullptr,
                                             train[order[it]], cfg, rng);
            if (!std::isfinite(st.total))
                throw NumericError("synthesis loss non-finite: l1=" + std::to_string(st.l1) +
                                   " edge=" + std::to_string(st.edge) +
                                   " adv=" + std::to_string(st.adv) +
                                   " sem=" + std::to_string(st.sem));
            log.row(gstep, {double(e), double(it), st.total, st.l1, st.edge, st.adv, st.sem,
                            st.d_loss});
        }
        TrainState st;
        st.step = gstep;
        st.epoch = e + 1;
        st.rng = rng.save();
        save_checkpoint(path_join(rq.out, "syn.ckpt"), gp, &st);
        save_checkpoint(path_join(rq.out, "disc.ckpt"), dp, nullptr);
    }
    if (rp.content_hash() != reg_hash_before)
        throw NumericError("frozen registration parameters changed during synthesis");

    const double psnr_after = holdout_psnr();

    write_run_record(rq,
                     {{"syn.ckpt", hex64(hash_file(path_join(rq.out, "syn.ckpt")))},
                      {"disc.ckpt", hex64(hash_file(path_join(rq.out, "disc.ckpt")))},
                      {"syn_log.tsv", hex64(hash_file(path_join(rq.out, "syn_log.tsv")))}},
                     {{"psnr_before", psnr_before}, {"psnr_after", psnr_after}});
    std::printf("train-syn: %" PRId64 " epochs, holdout psnr %.2f dB -> %.2f dB\n", epochs,
                psnr_before, psnr_after);
    return 0;
}

inline int cmd_eval(const CliRequest& rq) {
    if (rq.cfg.get_int("data.holdout") < 1) throw InputError("eval needs data.holdout > 0");
    Split sp = load_split(rq.out, rq.cfg.get_int("data.holdout"));
    const std::string gpath = path_join(rq.out, "syn.ckpt");
    require_artifact(gpath, "synthesis checkpoint (run train-syn first)");

    Rng rng(rq.seed);
    SynthesisNet<float> gnet;
    gnet.f = rq.cfg.get_int("nets.syn_features");
    ParamStore<float> gp;
    gnet.register_params(gp, rng);
    load_checkpoint(gpath, gp, nullptr);

    const int angles = int(rq.cfg.get_int("eval.angles"));
    std::vector<double> psnr_acc(kRegionNames.size(), 0.0), ssim_acc(kRegionNames.size(), 0.0);
    std::vector<CaseSuv> suv;
    for (const auto& pc : sp.holdout) {
        SynthOut so = synthesize(gnet, gp, pc.mr_ip, pc.mr_op);
        RegionReport rep = region_report(hu_to_norm(pc.ct), so.ct_norm, pc.labels);
        for (size_t r = 0; r < rep.rows.size(); ++r) {
            psnr_acc[r] += rep.rows[r].psnr;
            ssim_acc[r] += rep.rows[r].ssim;
        }
        Volume mu_true = hu_to_mu(pc.ct);
        Volume mu_syn = hu_to_mu(norm_to_hu(so.ct_norm));
        auto [pet_test, pet_ref] = ac_surrogate(pc.activity, mu_true, mu_syn, angles);
        suv.push_back(suv_difference(pet_test, pet_ref, pc.labels));
    }
    const double nc = double(sp.holdout.size());
    SuvReport srep = aggregate_suv(suv);

    const std::string rpath = path_join(rq.out, "eval_regions.tsv");
    std::FILE* f = std::fopen(rpath.c_str(), "w");
    if (!f) throw ArtifactError("cannot write " + rpath);
    std::fprintf(f, "region\tpsnr\tssim\n");
    for (size_t r = 0; r < kRegionNames.size(); ++r)
        std::fprintf(f, "%s\t%.6g\t%.6g\n", kRegionNames[r], psnr_acc[r] / nc,
                     ssim_acc[r] / nc);
    std::fclose(f);

    const std::string spath = path_join(rq.out, "eval_suv.tsv");
    f = std::fopen(spath.c_str(), "w");
    if (!f) throw ArtifactError("cannot write " + spath);
    std::fprintf(f, "roi\tmean\tsd\tcases\n");
    for (size_t r = 0; r < kSuvRoiNames.size(); ++r)
        std::fprintf(f, "%s\t%.6g\t%.6g\t%d\n", kSuvRoiNames[r], srep.mean[r], srep.sd[r],
                     srep.cases);
    std::fclose(f);

    write_run_record(rq,
                     {{"eval_regions.tsv", hex64(hash_file(rpath))},
                      {"eval_suv.tsv", hex64(hash_file(spath))}},
                     {{"whole_body_psnr", psnr_acc[0] / nc},
                      {"whole_body_ssim", ssim_acc[0] / nc},
                      {"cases", nc}});
    std::printf("eval: %zu held-out cases, whole-body psnr %.2f dB ssim %.3f\n",
                sp.holdout.size(), psnr_acc[0] / nc, ssim_acc[0] / nc);
    return 0;
}

inline int cmd_gradcheck(const CliRequest& rq) {
    auto cases = run_gradient_suite(rq.seed);
    bool all = true;
    std::printf("%-40s %-12s %s\n", "check", "max_rel_err", "status");
    std::map<std::string, double> results;
    for (const auto& c : cases) {
        std::printf("%-40s %-12.3g %s\n", c.name.c_str(), c.max_rel_err,
                    c.pass ? "PASS" : "FAIL");
        results[c.name] = c.max_rel_err;
        all = all && c.pass;
    }
    write_run_record(rq, {}, results);
    if (!all) throw NumericError("finite-difference checks failed");
    std::printf("gradcheck: %zu checks pass\n", cases.size());
    return 0;
}

inline int cmd_mine_sanity(const CliRequest& rq) {
    MineSanity ms = mine_gaussian_sanity(rq.seed, 0.9, 400, 256, 10000);
    const double err = std::abs(ms.estimate - ms.analytic);
    std::printf("mine-sanity: estimate=%.4f analytic=%.4f err=%.4f steps=%d\n", ms.estimate,
                ms.analytic, err, ms.steps);
    write_run_record(rq, {},
                     {{"estimate", ms.estimate}, {"analytic", ms.analytic}, {"err", err}});
    if (err > 0.10)
        throw NumericError("information bound off by " + std::to_string(err) +
                           " nats (tolerance 0.10)");
    return 0;
}

// Last data row of a training log, as label=value pairs appended to `lines`.
inline bool summarize_log(const std::string& path, const std::string& title,
                          std::vector<std::string>& lines) {
    std::FILE* f = std::fopen(path.c_str(), "rb");
    if (!f) return false;
    std::string text;
    char buf[4096];
    size_t n;
    while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
    std::fclose(f);
    std::vector<std::string> rows;
    size_t pos = 0;
    while (pos < text.size()) {
        size_t nl = text.find('\n', pos);
        if (nl == std::string::npos) nl = text.size();
        if (nl > pos) rows.push_back(text.substr(pos, nl - pos));
        pos = nl + 1;
    }
    if (rows.size() < 2) return false;
    lines.push_back(title + " (" + std::to_string(rows.size() - 1) + " iterations)");
    lines.push_back("  header: " + rows.front());
    lines.push_back("  final:  " + rows.back());
    return true;
}

inline int cmd_report(const CliRequest& rq) {
    std::vector<std::string> lines;
    bool any = false;
    any |= summarize_log(path_join(rq.out, "reg_log.tsv"), "registration training", lines);
    any |= summarize_log(path_join(rq.out, "syn_log.tsv"), "synthesis training", lines);

    for (const char* name : {"eval_regions.tsv", "eval_suv.tsv"}) {
        const std::string path = path_join(rq.out, name);
        std::FILE* f = std::fopen(path.c_str(), "rb");
        if (!f) continue;
        any = true;
        lines.push_back(std::string(name) + ":");
        std::string text;
        char buf[4096];
        size_t n;
        while ((n = std::fread(buf, 1, sizeof buf, f)) > 0) text.append(buf, n);
        std::fclose(f);
        size_t pos = 0;
        while (pos < text.size()) {
            size_t nl = text.find('\n', pos);
            if (nl == std::string::npos) nl = text.size();
            if (nl > pos) lines.push_back("  " + text.substr(pos, nl - pos));
            pos = nl + 1;
        }
    }
    if (!any)
        throw ArtifactError("nothing to report under " + rq.out +
                            " (expected training logs or eval tables)");

    const std::string rpath = path_join(rq.out, "report.txt");
    std::FILE* f = std::fopen(rpath.c_str(), "w");
    if (!f) throw ArtifactError("cannot write " + rpath);
    for (const auto& l : lines) std::fprintf(f, "%s\n", l.c_str());
    std::fclose(f);
    write_run_record(rq, {{"report.txt", hex64(hash_file(rpath))}}, {});
    for (const auto& l : lines) std::printf("%s\n", l.c_str());
    return 0;
}

} // namespace cli_detail

inline CliRequest parse_cli(const std::vector<std::string>& args) {
    static const std::vector<std::string> kCommands{"gen-data", "train-reg", "train-syn",
                                                    "train-seg", "eval", "gradcheck",
                                                    "mine-sanity", "report"};
    if (args.empty())
        throw InputError(
            "usage: sgwb <command> [--config PATH] [--set key=value] [--out DIR] [--seed N]");
    CliRequest rq;
    rq.command = args[0];
    if (std::find(kCommands.begin(), kCommands.end(), rq.command) == kCommands.end())
        throw InputError("unknown command: " + rq.command);

    std::vector<std::pair<std::string, std::string>> sets;
    std::string seed_flag, n_flag, size_flag;
    for (size_t i = 1; i < args.size(); ++i) {
        const std::string& a = args[i];
        auto need_value = [&](const char* flag) -> const std::string& {
            if (i + 1 >= args.size())
                throw InputError(std::string(flag) + " needs a value");
            return args[++i];
        };
        if (a == "--config")
            apply_config_file(rq.cfg, need_value("--config"));
        else if (a == "--set")
            sets.emplace_back("", need_value("--set"));
        else if (a == "--out")
            rq.out = need_value("--out");
        else if (a == "--seed")
            seed_flag = need_value("--seed");
        else if (a == "--n" && rq.command == "gen-data")
            n_flag = need_value("--n");
        else if (a == "--size" && rq.command == "gen-data")
            size_flag = need_value("--size");
        else
            throw InputError("unknown flag: " + a);
    }
    for (const auto& [_, kv] : sets) apply_override(rq.cfg, kv);
    if (!n_flag.empty()) rq.cfg.set("data.n", n_flag);
    if (!size_flag.empty()) rq.cfg.set("data.size", size_flag);
    if (!seed_flag.empty()) rq.cfg.set("train.seed", seed_flag);
    rq.seed = uint64_t(rq.cfg.get_int("train.seed"));
    return rq;
}

// In-process entry point; returns the process exit status and prints a
// one-line reason on failure.
inline int run_cli(const std::vector<std::string>& args) {
    std::string command = args.empty() ? "" : args[0];
    try {
        CliRequest rq = parse_cli(args);
        if (rq.out != ".") std::filesystem::create_directories(rq.out);
        using namespace cli_detail;
        if (rq.command == "gen-data") return cmd_gen_data(rq);
        if (rq.command == "train-seg") return cmd_train_seg(rq);
        if (rq.command == "train-reg") return cmd_train_reg(rq);
        if (rq.command == "train-syn") return cmd_train_syn(rq);
        if (rq.command == "eval") return cmd_eval(rq);
        if (rq.command == "gradcheck") return cmd_gradcheck(rq);
        if (rq.command == "mine-sanity") return cmd_mine_sanity(rq);
        if (rq.command == "report") return cmd_report(rq);
        throw InputError("unknown command: " + rq.command);
    } catch (const Error& e) {
        std::string msg = e.what();
        for (auto& ch : msg)
            if (ch == '\n' || ch == '\t') ch = ' ';
        std::fprintf(stderr, "sgwb: exit=%d command=%s reason=\"%s\"\n", int(e.cls),
                     command.c_str(), msg.c_str());
        return int(e.cls);
    }
}

} // namespace sgwb
