use crate::config::{Paths, RunConfig};
use crate::fail::{require_input, Validation};
use crate::report::{at_far, rebuild_summary, Report, SUMMARY_SECTION};
use anyhow::{anyhow, Context, Result};
use ecgid_core::cohort::{
    apply_range_filter, build_inter_pairs, build_intra_pairs, cap_exams_per_patient, drop_sparse_patients,
    filter_categorical, load_exams, refine_multi_exam, split_by_patient, write_exams, ColumnSchema,
    ExamCountDistribution, ExamTable, PairSet, Split, SplitManifest,
};
use ecgid_core::embedding::EmbeddingSet;
use ecgid_core::features::RangeTable;
use ecgid_core::identify::{evaluate_closed_set, GallerySpec};
use ecgid_core::learn::{embed_table, fit_norm_stats, train, Checkpoint};
use ecgid_core::openset::{build_protocol, evaluate_openset};
use ecgid_core::stats::{auc_from_scores, pair_correlations, pair_distances, TwoSampleReport};
use ecgid_core::synthgen::generate_cohort;
use ecgid_core::verify::{accumulate_all_pairs, export_curves, VerificationReport};
use serde_json::json;
use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

pub struct Ctx {
    pub cfg: RunConfig,
    pub paths: Paths,
    pub deterministic: bool,
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    Ok(BufWriter::new(File::create(path).with_context(|| format!("cannot write {}", path.display()))?))
}

fn open(path: &Path, produced_by: &str) -> Result<BufReader<File>> {
    require_input(path, produced_by)?;
    Ok(BufReader::new(File::open(path).with_context(|| format!("cannot read {}", path.display()))?))
}

fn load_table(path: &Path, produced_by: &str, schema: &ColumnSchema) -> Result<ExamTable> {
    require_input(path, produced_by)?;
    let loaded = load_exams(path, schema).with_context(|| format!("loading {}", path.display()))?;
    if !loaded.rejected.is_empty() {
        log::warn!("{}: {} rows rejected", path.display(), loaded.rejected.len());
    }
    Ok(loaded.table)
}

fn load_refined(ctx: &Ctx) -> Result<ExamTable> {
    load_table(&ctx.paths.refined, "prepare", &ColumnSchema::default())
}

fn load_split(ctx: &Ctx) -> Result<SplitManifest> {
    let p = &ctx.paths.split;
    SplitManifest::read_from(open(p, "prepare")?).with_context(|| format!("reading {}", p.display()))
}

fn load_pairs(path: &Path) -> Result<PairSet> {
    PairSet::read_from(open(path, "prepare")?).with_context(|| format!("reading {}", path.display()))
}

fn load_embeddings(path: &Path) -> Result<EmbeddingSet> {
    let (set, _) = EmbeddingSet::read_from(open(path, "embed")?).with_context(|| format!("reading {}", path.display()))?;
    set.check_unit_norm().with_context(|| format!("checking {}", path.display()))?;
    Ok(set)
}

fn check_fars(fars: &[f64], field: &str) -> Result<()> {
    if fars.is_empty() || fars.iter().any(|f| !(*f > 0.0 && *f <= 1.0)) {
        return Err(Validation(format!("{field}: FAR targets must lie in (0, 1]")).into());
    }
    Ok(())
}

pub fn synth(ctx: &Ctx) -> Result<()> {
    let params = ctx.cfg.synth.params(ctx.cfg.seed);
    let cohort = generate_cohort(&params).context("synth")?;
    let mut report = Report::new("synth", &ctx.cfg);
    let mut out = create(&ctx.paths.exams)?;
    let mut comments = report.provenance();
    comments.push(format!("clip_events={}", cohort.clip_events));
    write_exams(&cohort.table, &mut out, &comments)?;
    out.flush()?;
    report.metric("cohort", "patients", cohort.table.patient_count());
    report.metric("cohort", "exams", cohort.table.len());
    report.metric("cohort", "clip_events", cohort.clip_events);
    report.write(&ctx.paths.reports)
}

fn step_report(report: &mut Report, step: &str, table: &ExamTable) -> Result<()> {
    if table.is_empty() {
        return Err(anyhow!("refinement step `{step}` left no exams"));
    }
    let d = ExamCountDistribution::of(table, 10);
    report.metric(step, "exams", d.exams);
    report.metric(step, "patients", d.patients);
    report.record("exam_count_distribution", &json!({"step": step, "by_count": d.by_count, "overflow_at": d.overflow_at}));
    Ok(())
}

pub fn prepare(ctx: &Ctx) -> Result<()> {
    let p = &ctx.cfg.prepare;
    let seed = ctx.cfg.seed;
    let schema = p.columns.clone().unwrap_or_default();
    let mut report = Report::new("prepare", &ctx.cfg);
    let input = load_table(&ctx.paths.exams, "synth", &schema)?;
    step_report(&mut report, "input", &input)?;

    let step1 = refine_multi_exam(&input, p.min_exams, p.min_gap_days);
    step_report(&mut report, "step1_multi_exam", &step1)?;
    let ranged = apply_range_filter(&step1, &RangeTable::extended_physiological());
    let capped = cap_exams_per_patient(&ranged, p.cap, seed).context("step2")?;
    let step2 = drop_sparse_patients(&capped, p.min_exams);
    step_report(&mut report, "step2_range_and_cap", &step2)?;
    let step3 = if p.categorical_allowed.is_empty() {
        step2
    } else {
        drop_sparse_patients(&filter_categorical(&step2, &p.categorical_column, &p.categorical_allowed), p.min_exams)
    };
    step_report(&mut report, "step3_categorical", &step3)?;

    let manifest = split_by_patient(&step3, p.fractions, p.min_train_exams, seed).context("split")?;
    for s in Split::ALL {
        let sub = manifest.subset(&step3, s);
        report.metric("split", &format!("{s}_patients"), sub.patient_count());
        report.metric("split", &format!("{s}_exams"), sub.len());
    }

    let intra = build_intra_pairs(&step3, p.window_months).context("intra pairs")?;
    for w in &intra.warnings {
        log::warn!("{w}");
    }
    let inter = if intra.is_empty() {
        None
    } else {
        Some(build_inter_pairs(&intra, &step3, seed).context("inter pairs")?)
    };
    report.metric("pairs", "intra", intra.len());
    report.metric("pairs", "inter", inter.as_ref().map_or(0, PairSet::len));

    let prov = report.provenance();
    let mut out = create(&ctx.paths.refined)?;
    write_exams(&step3, &mut out, &prov)?;
    out.flush()?;
    let mut out = create(&ctx.paths.split)?;
    manifest.write_to(&mut out, &prov)?;
    out.flush()?;
    let mut out = create(&ctx.paths.intra_pairs)?;
    intra.write_to(&mut out, &prov)?;
    out.flush()?;
    if let Some(inter) = &inter {
        let mut out = create(&ctx.paths.inter_pairs)?;
        inter.write_to(&mut out, &prov)?;
        out.flush()?;
    }
    report.write(&ctx.paths.reports)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn stats(ctx: &Ctx) -> Result<()> {
    let bins = ctx.cfg.stats.overlap_bins;
    let table = load_refined(ctx)?;
    let mut pairs = load_pairs(&ctx.paths.intra_pairs)?;
    pairs.pairs.extend(load_pairs(&ctx.paths.inter_pairs)?.pairs);
    let c = pair_correlations(&table, &pairs).context("pair correlations")?;
    let mut report = Report::new("stats", &ctx.cfg);
    report.metric("pairs", "intra", c.intra_pearson.len());
    report.metric("pairs", "inter", c.inter_pearson.len());
    report.metric("pairs", "skipped_constant", c.skipped);
    report.metric("pearson", "intra_mean", mean(&c.intra_pearson));
    report.metric("pearson", "inter_mean", mean(&c.inter_pearson));
    report.metric("spearman", "intra_mean", mean(&c.intra_spearman));
    report.metric("spearman", "inter_mean", mean(&c.inter_spearman));
    let r = TwoSampleReport::compute(&c.intra_pearson, &c.inter_pearson, bins).context("pearson INTRA vs INTER")?;
    report.metrics_of("pearson_intra_vs_inter", &r);
    let r = TwoSampleReport::compute(&c.intra_spearman, &c.inter_spearman, bins).context("spearman INTRA vs INTER")?;
    report.metrics_of("spearman_intra_vs_inter", &r);

    if ctx.cfg.stats.embeddings {
        let set = load_embeddings(&ctx.paths.embeddings)?;
        let embedded: std::collections::HashSet<&str> = set.labels().iter().map(|l| l.exam_id.as_str()).collect();
        let sub = table.filter(|r| embedded.contains(r.exam_id.as_str()));
        let intra = build_intra_pairs(&sub, ctx.cfg.prepare.window_months).context("embedding intra pairs")?;
        if intra.is_empty() {
            return Err(anyhow!("no INTRA pairs among the embedded exams"));
        }
        let inter = build_inter_pairs(&intra, &sub, ctx.cfg.seed).context("embedding inter pairs")?;
        let mut both = intra;
        both.pairs.extend(inter.pairs);
        let (di, de) = pair_distances(&set, &both).context("embedding distances")?;
        let r = TwoSampleReport::compute(&di, &de, bins).context("distance INTRA vs INTER")?;
        report.metrics_of("distance_intra_vs_inter", &r);
        report.metric("distance_auc", "intra_over_inter", auc_from_scores(&di, &de)?);
        report.metric("distance_auc", "inverted", auc_from_scores(&de, &di)?);
    }
    report.write(&ctx.paths.reports)
}

pub fn train_cmd(ctx: &Ctx) -> Result<()> {
    let table = load_refined(ctx)?;
    let manifest = load_split(ctx)?;
    let (tr, va) = (manifest.subset(&table, Split::Train), manifest.subset(&table, Split::Val));
    let norm = fit_norm_stats(&tr, ctx.cfg.train.norm).context("normalisation")?;
    let cfg = ctx.cfg.train.train_config(ctx.cfg.seed, !ctx.deterministic);
    let outcome = train(&cfg, &tr, &va, &norm).context("training")?;
    let mut report = Report::new("train", &ctx.cfg);
    report.metric("train", "identities", outcome.classes.len());
    report.metric("train", "exams", tr.len());
    report.metric("train", "epochs_run", outcome.log.len());
    report.metric("train", "best_epoch", outcome.best_epoch);
    for e in &outcome.log {
        report.record("epoch", e);
    }
    let ckpt = Checkpoint::new(cfg, norm, &outcome);
    let mut out = create(&ctx.paths.checkpoint)?;
    ckpt.write_to(&mut out)?;
    out.flush()?;
    report.write(&ctx.paths.reports)
}

pub fn embed(ctx: &Ctx) -> Result<()> {
    let table = load_refined(ctx)?;
    let manifest = load_split(ctx)?;
    let ckpt = Checkpoint::read_from(open(&ctx.paths.checkpoint, "train")?)?;
    let mut report = Report::new("embed", &ctx.cfg);
    let jobs = [(ctx.cfg.embed.split, &ctx.paths.embeddings), (ctx.cfg.embed.cohort_split, &ctx.paths.cohort_embeddings)];
    for (split, path) in jobs {
        let sub = manifest.subset(&table, split);
        if sub.is_empty() {
            return Err(anyhow!("split {split} has no exams"));
        }
        let set = embed_table(&ckpt.params, &sub, &ckpt.norm)?;
        let mut meta = report.provenance_pairs();
        meta.push(("split".into(), split.to_string()));
        let mut out = create(path)?;
        set.write_to(&mut out, &meta)?;
        out.flush()?;
        report.metric(split.as_str(), "embeddings", set.len());
        report.metric(split.as_str(), "identities", sub.patient_count());
    }
    report.write(&ctx.paths.reports)
}

pub fn verify(ctx: &Ctx) -> Result<()> {
    let v = &ctx.cfg.verify;
    check_fars(&v.far_targets, "verify.far_targets")?;
    let set = load_embeddings(&ctx.paths.embeddings)?;
    let h = accumulate_all_pairs(&set, v.bins, v.block).context("score histograms")?;
    let r = VerificationReport::from_histograms(&h, &v.far_targets)?;
    let mut report = Report::new("verify", &ctx.cfg);
    report.metric("verify", "bins", r.bins);
    report.metric("verify", "genuine_pairs", r.n_genuine);
    report.metric("verify", "impostor_pairs", r.n_impostor);
    report.metric("verify", "eer_threshold", r.eer_threshold);
    report.metric(SUMMARY_SECTION, "eer", r.eer);
    for t in &r.tar_at_far {
        report.metric(SUMMARY_SECTION, &at_far("tar", t.far_target), t.tar);
        report.record("tar_at_far", t);
    }
    let curves = export_curves(&h, v.curve_points)?;
    std::fs::create_dir_all(&ctx.paths.reports)?;
    let mut out = create(&ctx.paths.reports.join("verify_curves.tsv"))?;
    for line in report.provenance() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "threshold\tfar\ttar\tfrr")?;
    for c in &curves {
        writeln!(out, "{}\t{}\t{}\t{}", c.threshold, c.far, c.tar, c.frr)?;
    }
    out.flush()?;
    report.write(&ctx.paths.reports)?;
    rebuild_summary(&ctx.paths.reports, &ctx.cfg)
}

pub fn identify(ctx: &Ctx) -> Result<()> {
    let set = load_embeddings(&ctx.paths.embeddings)?;
    let spec = GallerySpec { strategy: ctx.cfg.identify.strategy, seed: ctx.cfg.seed };
    let (s, curve) = evaluate_closed_set(&set, spec).context("closed-set identification")?;
    let mut report = Report::new("identify", &ctx.cfg);
    report.metric("identify", "gallery_size", s.gallery_size);
    report.metric("identify", "probes", s.n_probes);
    report.metric("identify", "excluded_identities", s.excluded_identities);
    report.metric(SUMMARY_SECTION, "rank@1", s.rank1);
    report.metric(SUMMARY_SECTION, "rank@5", s.rank5);
    report.metric(SUMMARY_SECTION, "rank@10", s.rank10);
    report.metric(SUMMARY_SECTION, "rank_k_95", s.rank_k_95);
    let mut out = create(&ctx.paths.reports.join("cmc.tsv"))?;
    for line in report.provenance() {
        writeln!(out, "# {line}")?;
    }
    writeln!(out, "rank\tidentification_rate")?;
    for (k, v) in curve.values.iter().enumerate() {
        writeln!(out, "{}\t{}", k + 1, v)?;
    }
    out.flush()?;
    report.write(&ctx.paths.reports)?;
    rebuild_summary(&ctx.paths.reports, &ctx.cfg)
}

pub fn openset(ctx: &Ctx) -> Result<()> {
    let o = &ctx.cfg.openset;
    check_fars(&o.far_targets, "openset.far_targets")?;
    if o.strategies.is_empty() {
        return Err(Validation("openset.strategies must not be empty".into()).into());
    }
    let test = load_embeddings(&ctx.paths.embeddings)?;
    let pool = load_embeddings(&ctx.paths.cohort_embeddings)?;
    let protocol = build_protocol(&test, &pool, o.sizes(), o.cohort_size, o.k, ctx.cfg.seed).context("open-set protocol")?;
    let r = evaluate_openset(&protocol, &o.strategies, &o.far_targets).context("open-set evaluation")?;
    let mut report = Report::new("openset", &ctx.cfg);
    report.metric("openset", "gallery", r.sizes.gallery);
    report.metric("openset", "known_probes", r.sizes.known_probes);
    report.metric("openset", "impostor_probes", r.sizes.impostor_probes);
    report.metric("openset", "k", r.k);
    report.metric("openset", "cohort_size", r.cohort_size);
    for row in &r.rows {
        report.metric(SUMMARY_SECTION, &format!("{}/{}", at_far("dir", row.far_target), row.strategy), row.dir);
        report.record("dir_at_far", row);
    }
    report.write(&ctx.paths.reports)?;
    rebuild_summary(&ctx.paths.reports, &ctx.cfg)
}
