//! Acceptance suite. Runs every criterion, prints one PASS/FAIL line each and
//! exits non-zero if any failed.

mod common;

use std::fs;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use common::*;
use petfuse_core::components::{label_components, Connectivity};
use petfuse_core::gating::{
    fit_baseline, or_fuse, BaselineClassifier, Decision, FitConfig, DEFAULT_GAMMA, ENSEMBLE_SIZE, FEATURE_COUNT,
};
use petfuse_core::inference::{binarize, late_fuse, plan_windows, sliding_window_infer};
use petfuse_core::io::{load_nifti, load_volume, save_volume};
use petfuse_core::metrics::{
    aggregate_cv, dice, false_negative_volume, false_positive_volume, round_display, MetricMeans,
};
use petfuse_core::pipeline::{run_pipeline, ClassifierSource, PipelineConfig};
use petfuse_core::postprocess::{
    suppress_small_components, suppress_tiny_prediction, zero_z_boundaries, BoundarySpec,
};
use petfuse_core::preprocess::CaseBundle;
use petfuse_core::splits::{make_folds, validate_assignment, validate_folds, Diagnosis};
use petfuse_core::{BinaryMask, Dims, ProbabilityVolume, Volume3D};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;
type Corruption = (&'static str, Box<dyn Fn(&mut Vec<u8>)>);
type Criterion = (&'static str, fn() -> Outcome);

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

fn within(elapsed: Duration, limit_s: f64, what: &str) -> Result<(), String> {
    check(elapsed.as_secs_f64() < limit_s, || {
        format!("{what} took {:.2}s, limit {limit_s}s", elapsed.as_secs_f64())
    })
}

const CONNS: [(Connectivity, u8); 3] = [
    (Connectivity::Six, 6),
    (Connectivity::Eighteen, 18),
    (Connectivity::TwentySix, 26),
];

fn metric_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut compared = 0;
    for _ in 0..1000 {
        let d = random_dims(&mut rng, 8);
        let spacing = [rng.gen_range(0.5..4.0), rng.gen_range(0.5..4.0), rng.gen_range(0.5..4.0)];
        let (dp, dg) = (rng.gen_range(0.0..0.6), rng.gen_range(0.0..0.6));
        let p = random_bits(&mut rng, d.len(), dp);
        let g = random_bits(&mut rng, d.len(), dg);
        let (pm, gm) = (mask_from_bits(d, spacing, &p), mask_from_bits(d, spacing, &g));
        for (conn, k) in CONNS {
            let o = oracle_metrics(&p, &g, d.to_array(), spacing, k);
            let dv = dice(&pm, &gm).map_err(|e| e.to_string())?.value();
            let fpv = false_positive_volume(&pm, &gm, conn).map_err(|e| e.to_string())?;
            let fnv = false_negative_volume(&pm, &gm, conn).map_err(|e| e.to_string())?;
            check(dv == o.dice, || format!("dice {dv} vs oracle {} on {d}", o.dice))?;
            let rel = |a: f64, b: f64| (a - b).abs() <= 1e-9 * b.abs().max(1e-300) || a == b;
            check(rel(fpv, o.fpv_ml), || format!("fpv {fpv} vs oracle {} (k={k})", o.fpv_ml))?;
            check(rel(fnv, o.fnv_ml), || format!("fnv {fnv} vs oracle {} (k={k})", o.fnv_ml))?;
            compared += 1;
        }
    }
    within(start.elapsed(), 30.0, "metric oracle")?;
    Ok(format!("{compared} comparisons in {:.2}s", start.elapsed().as_secs_f64()))
}

fn cv_fixtures() -> Outcome {
    let dice_only = |v: [f64; 5]| -> Vec<MetricMeans> {
        v.iter()
            .map(|&d| MetricMeans {
                dice: Some(d),
                fpv: 0.0,
                fnv: None,
            })
            .collect()
    };
    let mut lines = Vec::new();
    let mut failures = Vec::new();
    let mut expect = |name: &str, raw: f64, printed: f64| {
        let shown = round_display(raw);
        let ok = shown == printed;
        lines.push(format!("{name}: mean {raw:.6} -> {shown:.4}, table {printed:.4}"));
        if !ok {
            failures.push(format!(
                "{name} displays {shown:.4} but the table prints {printed:.4} (|diff| {:.1e})",
                (raw - printed).abs()
            ));
        }
    };

    let swin = aggregate_cv(&dice_only([0.6627, 0.6574, 0.6732, 0.6905, 0.6540])).unwrap();
    expect("swin dice", swin.dice.unwrap(), 0.6675);
    let nnunet = aggregate_cv(&dice_only([0.6876, 0.6829, 0.7133, 0.7275, 0.6755])).unwrap();
    expect("nn-unet non-healthy dice", nnunet.dice.unwrap(), 0.6973);
    let fusion: Vec<MetricMeans> = [
        (0.7146, 5.1083, 8.5464),
        (0.6976, 6.5240, 7.8235),
        (0.7264, 7.3805, 4.8489),
        (0.7545, 4.3221, 10.7778),
        (0.7131, 6.3486, 7.6357),
    ]
    .iter()
    .map(|&(d, fnv, fpv)| MetricMeans {
        dice: Some(d),
        fpv,
        fnv: Some(fnv),
    })
    .collect();
    let f = aggregate_cv(&fusion).unwrap();
    expect("fusion dice", f.dice.unwrap(), 0.7212);
    expect("fusion fnv", f.fnv.unwrap(), 5.9367);
    expect("fusion fpv", f.fpv, 7.9265);

    for l in &lines {
        println!("    {l}");
    }
    if failures.is_empty() {
        Ok("all five fixtures reproduce at 4 decimals".into())
    } else {
        Err(failures.join("; "))
    }
}

fn ccl_oracle() -> Outcome {
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let d = Dims::new(6, 6, 6);
    for trial in 0..1000 {
        let density = rng.gen_range(0.05..0.8);
        let bits = random_bits(&mut rng, d.len(), density);
        let m = mask_from_bits(d, [1.0; 3], &bits);
        let mut counts = [0usize; 3];
        for (slot, (conn, k)) in CONNS.iter().enumerate() {
            let cmap = label_components(&m, *conn);
            let (oracle, n) = flood_labels(&bits, d.to_array(), *k);
            check(cmap.len() == n as usize && same_partition(cmap.labels(), &oracle), || {
                format!("trial {trial}, connectivity {k}: partition differs from flood fill")
            })?;
            counts[slot] = cmap.len();
        }
        check(counts[2] <= counts[1] && counts[1] <= counts[0], || {
            format!("trial {trial}: counts K6={} K18={} K26={}", counts[0], counts[1], counts[2])
        })?;
    }
    within(start.elapsed(), 10.0, "labeling oracle")?;
    Ok(format!("3000 labelings in {:.2}s", start.elapsed().as_secs_f64()))
}

fn gate_truth_table() -> Outcome {
    let gamma = DEFAULT_GAMMA;
    check(gamma == 0.3, || format!("default gamma is {gamma}"))?;
    for pattern in 0u32..(1 << ENSEMBLE_SIZE) {
        let probs: Vec<f64> = (0..ENSEMBLE_SIZE)
            .map(|i| if pattern >> i & 1 == 1 { 0.31 } else { 0.29 })
            .collect();
        let got = or_fuse(&probs, gamma).map_err(|e| e.to_string())?;
        let want = if pattern == 0 { Decision::Healthy } else { Decision::Diseased };
        check(got == want, || format!("pattern {pattern:08b}: {got:?}"))?;
        // same pattern with crossing members exactly at the threshold
        let at: Vec<f64> = (0..ENSEMBLE_SIZE)
            .map(|i| if pattern >> i & 1 == 1 { gamma } else { 0.0 })
            .collect();
        let got = or_fuse(&at, gamma).map_err(|e| e.to_string())?;
        check(got == want, || format!("pattern {pattern:08b} at p=gamma: {got:?}"))?;
    }
    Ok("256 patterns, p = gamma counts as diseased".into())
}

fn sliding_window() -> Outcome {
    let w = Dims::new(96, 96, 96);
    let plan = plan_windows(Dims::new(144, 144, 144), w, 0.25).map_err(|e| e.to_string())?;
    let xs: std::collections::BTreeSet<usize> = plan.starts.iter().map(|s| s[0]).collect();
    check(xs.into_iter().collect::<Vec<_>>() == [0, 48], || "dim 144 starts differ from {0, 48}".into())?;
    let stride_plan = plan_windows(Dims::new(400, 96, 96), w, 0.25).map_err(|e| e.to_string())?;
    check(stride_plan.starts[1][0] - stride_plan.starts[0][0] == 72, || "stride is not 72".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(105);
    for _ in 0..200 {
        let d = random_dims(&mut rng, 200);
        let plan = plan_windows(d, w, 0.25).map_err(|e| e.to_string())?;
        for a in 0..3 {
            let mut covered = vec![false; plan.padded_dims.axis(a)];
            let starts: std::collections::BTreeSet<usize> = plan.starts.iter().map(|s| s[a]).collect();
            for s in &starts {
                covered[*s..*s + w.axis(a)].iter_mut().for_each(|c| *c = true);
            }
            check(covered.iter().all(|&c| c), || format!("{d}: axis {a} not covered"))?;
        }
        let per_axis: usize = (0..3)
            .map(|a| plan.starts.iter().map(|s| s[a]).collect::<std::collections::BTreeSet<_>>().len())
            .product();
        check(per_axis == plan.starts.len(), || format!("{d}: windows are not a full grid"))?;
    }
    for d in [Dims::new(200, 200, 200), Dims::new(97, 150, 61)] {
        let plan = plan_windows(d, w, 0.25).map_err(|e| e.to_string())?;
        check(plan.coverage().iter().all(|&c| c >= 1), || format!("{d}: voxel left uncovered"))?;
    }

    for (d, c) in [(Dims::new(30, 17, 9), 0.37f32), (Dims::new(5, 40, 23), 1.0), (Dims::new(12, 12, 12), 0.0)] {
        let b = CaseBundle::new(Volume3D::zeros(d, [1.0; 3]).unwrap(), Volume3D::zeros(d, [1.0; 3]).unwrap(), None)
            .unwrap();
        let model = move |p: &Volume3D, _: &Volume3D| Volume3D::filled(p.dims(), p.spacing(), c);
        let out = sliding_window_infer(&b, &model, Dims::new(8, 8, 8), 0.25).map_err(|e| e.to_string())?;
        check(out.data().iter().all(|&v| v == c), || format!("constant {c} not preserved on {d}"))?;
    }
    Ok("constant invariance, coverage on 200 random grids, stride 72, starts {0,48}".into())
}

fn prob(d: Dims, v: f32) -> ProbabilityVolume {
    ProbabilityVolume::new(Volume3D::filled(d, [1.0; 3], v).unwrap()).unwrap()
}

fn fusion() -> Outcome {
    let d = Dims::new(4, 3, 2);
    let f = late_fuse(&[prob(d, 0.6), prob(d, 0.8)], None).map_err(|e| e.to_string())?;
    check(f.data().iter().all(|&v| (v - 0.7).abs() < 1e-6), || "fuse(0.6, 0.8) != 0.7".into())?;

    let mut rng = ChaCha8Rng::seed_from_u64(106);
    for _ in 0..100 {
        let d = random_dims(&mut rng, 6);
        let ps: Vec<ProbabilityVolume> = (0..4)
            .map(|_| ProbabilityVolume::new(random_volume(&mut rng, d, 0.0, 1.0)).unwrap())
            .collect();
        let mut perm = ps.clone();
        perm.reverse();
        perm.swap(1, 2);
        let a = late_fuse(&ps, None).map_err(|e| e.to_string())?;
        let b = late_fuse(&perm, None).map_err(|e| e.to_string())?;
        check(a == b, || "fusion depends on input order".into())?;
        let id = late_fuse(&ps[..2], Some(&[1.0, 0.0])).map_err(|e| e.to_string())?;
        check(id == ps[0], || "weights (1, 0) are not the identity".into())?;
        let dup = late_fuse(&[ps[0].clone(), ps[0].clone(), ps[0].clone()], None).map_err(|e| e.to_string())?;
        let t = rng.gen_range(0.05f32..0.95);
        check(binarize(&dup, t).unwrap() == binarize(&ps[0], t).unwrap(), || {
            "binarize(fuse(duplicates)) differs".into()
        })?;
    }
    Ok("0.6/0.8 -> 0.7, permutation invariance, (1,0) identity, duplicate idempotence".into())
}

fn postprocessing() -> Outcome {
    let line = |n: usize, on: usize| BinaryMask::from_bools(Dims::new(n, 1, 1), [1.0; 3], (0..n).map(|i| i < on)).unwrap();
    check(suppress_tiny_prediction(&line(20, 9), 10).count() == 0, || "9-voxel prediction kept".into())?;
    check(suppress_tiny_prediction(&line(20, 10), 10).count() == 10, || "10-voxel prediction removed".into())?;
    let spec: BoundarySpec = "percent:12".parse().map_err(|e: petfuse_core::Error| e.to_string())?;
    check(spec.slice_counts(100) == (12, 12), || format!("12% of 100 gives {:?}", spec.slice_counts(100)))?;
    let full = BinaryMask::from_bools(Dims::new(1, 1, 100), [1.0; 3], std::iter::repeat_n(true, 100)).unwrap();
    let z = zero_z_boundaries(&full, &spec).map_err(|e| e.to_string())?;
    check(z.count() == 76, || format!("{} voxels survive 12% boundaries", z.count()))?;

    let mut rng = ChaCha8Rng::seed_from_u64(107);
    for _ in 0..300 {
        let d = random_dims(&mut rng, 8);
        let pd = rng.gen_range(0.05..0.5);
        let m = mask_from_bits(d, [1.0; 3], &random_bits(&mut rng, d.len(), pd));
        let g = mask_from_bits(d, [1.0; 3], &random_bits(&mut rng, d.len(), 0.2));
        let spec = BoundarySpec::Slices {
            lower: rng.gen_range(0..3),
            upper: rng.gen_range(0..3),
        };
        let once = zero_z_boundaries(&m, &spec).unwrap();
        check(zero_z_boundaries(&once, &spec).unwrap() == once, || "boundary zeroing not idempotent".into())?;
        let min = rng.gen_range(0..20);
        let s = suppress_tiny_prediction(&m, min);
        check(suppress_tiny_prediction(&s, min) == s, || "suppression not idempotent".into())?;
        let c = suppress_small_components(&m, min, Connectivity::Eighteen);
        check(suppress_small_components(&c, min, Connectivity::Eighteen) == c, || {
            "component suppression not idempotent".into()
        })?;
        let before = false_positive_volume(&m, &g, Connectivity::Eighteen).unwrap();
        for after in [&s, &c] {
            let fpv = false_positive_volume(after, &g, Connectivity::Eighteen).unwrap();
            check(fpv <= before, || format!("fpv rose from {before} to {fpv}"))?;
        }
    }
    Ok("ten-voxel rule, 12% -> 12 slices, idempotence, FPV non-increasing".into())
}

fn splitter() -> Outcome {
    let roster = cohort_roster(7);
    let a = make_folds(&roster, 5, 2022).map_err(|e| e.to_string())?;
    let b = make_folds(&roster, 5, 2022).map_err(|e| e.to_string())?;
    check(a == b, || "split differs under a fixed seed".into())?;
    let report = validate_assignment(&a, &roster);
    check(report.grouping_violations.is_empty(), || {
        format!("grouping violations: {:?}", report.grouping_violations)
    })?;
    let mut worst: f64 = 0.0;
    for dx in Diagnosis::ALL {
        let total = roster.iter().filter(|r| r.diagnosis == dx).count() as f64;
        for fold in 0..5 {
            let n = roster
                .iter()
                .filter(|r| r.diagnosis == dx && a.fold_of(&r.patient_id) == Some(fold))
                .count() as f64;
            worst = worst.max((n - total / 5.0).abs());
        }
    }
    check(worst <= 2.0, || format!("per-fold diagnosis count off by {worst}"))?;

    // the detector must see a patient split across folds
    let mut study_fold = petfuse_core::splits::study_folds(&a, &roster);
    let twice = roster
        .iter()
        .find(|r| roster.iter().filter(|o| o.patient_id == r.patient_id).count() > 1)
        .unwrap();
    let f = study_fold[&twice.study_id];
    study_fold.insert(twice.study_id.clone(), (f + 1) % 5);
    check(!validate_folds(&study_fold, 5, &roster).grouping_violations.is_empty(), || {
        "split patient not reported".into()
    })?;
    Ok(format!("{} studies, max deviation {worst} (bound 2)", roster.len()))
}

fn baseline() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(109);
    let n = 80;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for i in 0..n {
        let y = i % 2 == 1;
        let mut f = [0.0; FEATURE_COUNT];
        for (k, v) in f.iter_mut().enumerate() {
            *v = rng.gen_range(-2.0..2.0) + if k == 2 && y { 5.0 } else { 0.0 };
        }
        xs.push(f);
        ys.push(y);
    }
    let mut max_err: f64 = 0.0;
    for _ in 0..20 {
        let params: Vec<f64> = (0..=FEATURE_COUNT).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let build = |p: &[f64]| BaselineClassifier::new(p[..FEATURE_COUNT].try_into().unwrap(), p[FEATURE_COUNT]).unwrap();
        let (gw, gb) = build(&params).log_loss_gradient(&xs, &ys);
        let fd = central_difference(|p| build(p).log_loss(&xs, &ys), &params, 1e-4);
        for k in 0..FEATURE_COUNT {
            max_err = max_err.max((gw[k] - fd[k]).abs());
        }
        max_err = max_err.max((gb - fd[FEATURE_COUNT]).abs());
    }
    check(max_err < 1e-5, || format!("gradient error {max_err:.2e}"))?;
    let clf = fit_baseline(&xs, &ys, &FitConfig::default()).map_err(|e| e.to_string())?;
    let correct = xs.iter().zip(&ys).filter(|(x, &y)| (clf.predict(*x).unwrap() >= 0.5) == y).count();
    check(correct == n, || format!("training accuracy {correct}/{n}"))?;
    Ok(format!("max gradient error {max_err:.1e}, accuracy {correct}/{n}"))
}

fn expect_err(r: std::thread::Result<petfuse_core::Result<Volume3D>>, what: &str) -> Result<(), String> {
    match r {
        Err(_) => Err(format!("{what}: reader panicked")),
        Ok(Ok(_)) => Err(format!("{what}: accepted")),
        Ok(Err(_)) => Ok(()),
    }
}

fn io() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(110);
    for i in 0..200 {
        let d = random_dims(&mut rng, 7);
        let spacing = [rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0), rng.gen_range(0.1..5.0)];
        let data: Vec<f32> = (0..d.len())
            .map(|_| loop {
                let v = f32::from_bits(rng.gen());
                if v.is_finite() {
                    break v;
                }
            })
            .collect();
        let v = Volume3D::new(d, spacing, data).unwrap();
        let p = tmp.path().join(format!("v{i}"));
        save_volume(&v, &p).map_err(|e| e.to_string())?;
        let back = load_volume(&p).map_err(|e| e.to_string())?;
        let same = back.dims() == d
            && back.spacing() == spacing
            && back.data().iter().zip(v.data()).all(|(a, b)| a.to_bits() == b.to_bits());
        check(same, || format!("volume {i} did not roundtrip bitwise"))?;
    }

    let cube: Vec<u8> = (0..8).flat_map(|i| (i as f32).to_le_bytes()).collect();
    let nii = tmp.path().join("cube.nii");
    fs::write(&nii, nifti_bytes([2, 2, 2], [1.5, 2.0, 2.5], 16, &cube)).unwrap();
    let v = load_nifti(&nii).map_err(|e| e.to_string())?;
    check(v.data() == [0.0, 1.0, 2.0, 3.0, 4.0, 5.0, 6.0, 7.0] && v.spacing() == [1.5, 2.0, 2.5], || {
        format!("float32 fixture decoded to {:?} {:?}", v.data(), v.spacing())
    })?;
    let shorts: Vec<u8> = [-3i16, 0, 7, 1000].iter().flat_map(|v| v.to_le_bytes()).collect();
    fs::write(&nii, nifti_bytes([4, 1, 1], [1.0; 3], 4, &shorts)).unwrap();
    let v = load_nifti(&nii).map_err(|e| e.to_string())?;
    check(v.data() == [-3.0, 0.0, 7.0, 1000.0], || format!("int16 fixture decoded to {:?}", v.data()))?;

    let good = nifti_bytes([2, 2, 2], [1.0; 3], 16, &cube);
    let corruptions: Vec<Corruption> = vec![
        ("sizeof_hdr", Box::new(|b| b[0..4].copy_from_slice(&999i32.to_le_bytes()))),
        ("magic", Box::new(|b| b[344..348].copy_from_slice(b"xyz\0"))),
        ("dim0", Box::new(|b| b[40..42].copy_from_slice(&9i16.to_le_bytes()))),
        ("negative dim", Box::new(|b| b[42..44].copy_from_slice(&(-2i16).to_le_bytes()))),
        ("4d", Box::new(|b| {
            b[40..42].copy_from_slice(&4i16.to_le_bytes());
            b[48..50].copy_from_slice(&3i16.to_le_bytes());
        })),
        ("datatype", Box::new(|b| b[70..72].copy_from_slice(&1234i16.to_le_bytes()))),
        ("vox_offset", Box::new(|b| b[108..112].copy_from_slice(&1.0e6f32.to_le_bytes()))),
        ("truncated", Box::new(|b| b.truncate(360))),
        ("header only", Box::new(|b| b.truncate(200))),
        ("gzip", Box::new(|b| b[0..2].copy_from_slice(&[0x1f, 0x8b]))),
    ];
    for (name, corrupt) in &corruptions {
        let mut bytes = good.clone();
        corrupt(&mut bytes);
        fs::write(&nii, &bytes).unwrap();
        expect_err(catch_unwind(AssertUnwindSafe(|| load_nifti(&nii))), name)?;
    }
    let hdr = tmp.path().join("m.mvol.json");
    let raw = tmp.path().join("m.mvol.raw");
    fs::write(&raw, [0u8; 32]).unwrap();
    for (name, text) in [
        ("mvol json", "{ not json"),
        ("mvol dtype", r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"f64","order":"x-fastest","endianness":"little"}"#),
        ("mvol dims", r#"{"dims":[2,2,3],"spacing_mm":[1,1,1],"dtype":"f32","order":"x-fastest","endianness":"little"}"#),
        ("mvol order", r#"{"dims":[2,2,2],"spacing_mm":[1,1,1],"dtype":"f32","order":"z-fastest","endianness":"little"}"#),
        ("mvol spacing", r#"{"dims":[2,2,2],"spacing_mm":[0,1,1],"dtype":"f32","order":"x-fastest","endianness":"little"}"#),
    ] {
        fs::write(&hdr, text).unwrap();
        expect_err(catch_unwind(AssertUnwindSafe(|| load_volume(&hdr))), name)?;
    }

    let mut fuzzed = 0;
    for _ in 0..2000 {
        let mut bytes = good.clone();
        for _ in 0..rng.gen_range(1..6) {
            let at = rng.gen_range(0..bytes.len());
            bytes[at] = rng.gen();
        }
        if rng.gen_bool(0.2) {
            let keep = rng.gen_range(0..bytes.len());
            bytes.truncate(keep);
        }
        fs::write(&nii, &bytes).unwrap();
        if catch_unwind(AssertUnwindSafe(|| load_nifti(&nii))).is_err() {
            return Err("reader panicked on fuzzed header".into());
        }
        fuzzed += 1;
    }
    Ok(format!("200 bitwise roundtrips, 2 fixtures, {} targeted corruptions, {fuzzed} fuzz inputs", corruptions.len() + 5))
}

fn baseline_weights(path: &Path) {
    use petfuse_core::gating::{BaselineEnsemble, ClassifierId};
    let mut w = [0.0; FEATURE_COUNT];
    w[0] = 1.0;
    let members = ClassifierId::all()
        .into_iter()
        .map(|id| (id, BaselineClassifier::new(w, -8.0).unwrap()))
        .collect();
    fs::write(path, serde_json::to_string(&BaselineEnsemble { members }).unwrap()).unwrap();
}

fn end_to_end() -> Outcome {
    let tmp = tempfile::tempdir().map_err(|e| e.to_string())?;
    let root = tmp.path().join("in");
    let d = Dims::new(6, 5, 10);
    let pet = Volume3D::filled(d, [2.0; 3], 1.0).unwrap();
    write_case(&root, "healthy", &pet, None, &[]);
    fs::write(root.join("healthy/prob_a.mvol.json"), "garbage").unwrap();
    let expect =
        BinaryMask::from_bools(d, [2.0; 3], (0..d.len()).map(|i| (2..7).contains(&d.coords(i).2))).unwrap();
    write_case(&root, "diseased", &pet, Some(&expect), &[("a", 0.6), ("b", 0.8)]);
    let scores = tmp.path().join("scores.csv");
    write_scores(&scores, &[("healthy", 0.29), ("diseased", 0.3)]);

    let cfg = PipelineConfig {
        input_dir: root.clone(),
        output_dir: tmp.path().join("out"),
        classifier: Some(ClassifierSource::ScoreFile(scores)),
        boundary: BoundarySpec::Slices { lower: 2, upper: 3 },
        ..PipelineConfig::default()
    };
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    check(report.failed == 0, || format!("{} cases failed: {:?}", report.failed, report.cases))?;
    let healthy = petfuse_core::io::load_mask(tmp.path().join("out/healthy/pred")).map_err(|e| e.to_string())?;
    check(healthy.count() == 0 && report.cases[1].gated == Some(true), || "healthy case not gated".into())?;
    let diseased = petfuse_core::io::load_mask(tmp.path().join("out/diseased/pred")).map_err(|e| e.to_string())?;
    check(diseased == expect, || format!("diseased mask has {} voxels, expected {}", diseased.count(), expect.count()))?;

    let big = tmp.path().join("big");
    let d = Dims::new(64, 64, 64);
    let pet = Volume3D::from_fn(d, [2.0; 3], |x, y, z| {
        let r2 = |a: usize, c: usize| (a as f32 - c as f32).powi(2);
        if r2(x, 32) + r2(y, 32) + r2(z, 56) < 36.0 {
            12.0
        } else if r2(x, 20) + r2(y, 32) + r2(z, 30) < 9.0 {
            6.0
        } else {
            1.0
        }
    })
    .unwrap();
    let gt = BinaryMask::from_predicate(&pet, |v| v == 6.0);
    write_case(&big.join("in"), "case64", &pet, Some(&gt), &[("a", 0.6), ("b", 0.8)]);
    let weights = big.join("weights.json");
    baseline_weights(&weights);
    let cfg = PipelineConfig {
        input_dir: big.join("in"),
        output_dir: big.join("out"),
        classifier: Some(ClassifierSource::BaselineWeights(weights)),
        ..PipelineConfig::default()
    };
    let start = Instant::now();
    let report = run_pipeline(&cfg).map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    check(report.failed == 0, || format!("64^3 case failed: {:?}", report.cases[0].error))?;
    within(elapsed, 1.0, "64^3 pipeline")?;
    Ok(format!("healthy gated, diseased mask exact, 64^3 run in {:.3}s", elapsed.as_secs_f64()))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        ("metric oracle equivalence", metric_oracle),
        ("cv aggregation fixtures", cv_fixtures),
        ("connected-component oracle", ccl_oracle),
        ("gate truth table", gate_truth_table),
        ("sliding-window properties", sliding_window),
        ("fusion properties", fusion),
        ("post-processing", postprocessing),
        ("splitter", splitter),
        ("baseline classifier", baseline),
        ("volume i/o", io),
        ("end-to-end pipeline", end_to_end),
    ];
    let mut failed = 0;
    for (i, (name, run)) in criteria.iter().enumerate() {
        let outcome = catch_unwind(run).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {:>2} PASS  {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("criterion {:>2} FAIL  {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
