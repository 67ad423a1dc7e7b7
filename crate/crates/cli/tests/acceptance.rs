//! Release gate. Each test checks one numbered acceptance criterion and
//! prints a single PASS/FAIL verdict line (visible with `--nocapture`; a
//! failing criterion also panics with the first offending checks).
//!
//! Run the whole gate with:
//!   cargo test -p ankle-msk-cli --test acceptance -- --nocapture

use std::io::{BufRead, BufReader};
use std::path::{Path, PathBuf};
use std::process::{Command, Stdio};
use std::time::{Duration, Instant};

use ankle_msk::msk::{force_length, force_velocity, moment_arm, mtu_length, passive_force};
use ankle_msk::signal::design_highpass;
use ankle_msk::{
    ankle_torque, generate_trial, nrmse, predict_trial, r_squared, ActivationState, AnkleModel,
    Bounds, ModelDocument, MuscleParams, NeuralCoeffs, ParamVector, PipelineConfig,
    SyntheticProfile, VelocityMode,
};
use ankle_msk_rt::{serve, Client, ServeConfig};

const BIN: &str = env!("CARGO_BIN_EXE_ankle-msk");

/// Collects failed checks for one criterion and prints exactly one verdict
/// line at the end. Failure details are capped so a broken loop over
/// hundreds of points stays readable.
struct Verdict {
    id: u32,
    name: &'static str,
    failed: usize,
    details: Vec<String>,
}

impl Verdict {
    fn new(id: u32, name: &'static str) -> Self {
        Self { id, name, failed: 0, details: Vec::new() }
    }

    fn check(&mut self, ok: bool, detail: impl FnOnce() -> String) {
        if !ok {
            self.failed += 1;
            if self.details.len() < 8 {
                self.details.push(detail());
            }
        }
    }

    fn finish(self, summary: String) {
        if self.failed == 0 {
            println!("criterion {:>2} PASS  {} ({summary})", self.id, self.name);
        } else {
            println!(
                "criterion {:>2} FAIL  {} ({} checks failed)",
                self.id, self.name, self.failed
            );
            panic!(
                "criterion {} ({}) failed {} checks:\n  {}",
                self.id,
                self.name,
                self.failed,
                self.details.join("\n  ")
            );
        }
    }
}

fn run_in(dir: &Path, args: &[&str]) -> std::process::Output {
    Command::new(BIN)
        .args(args)
        .current_dir(dir)
        .output()
        .expect("failed to launch the CLI binary")
}

fn run_ok(dir: &Path, args: &[&str]) {
    let out = run_in(dir, args);
    assert!(
        out.status.success(),
        "`{}` failed with {:?}:\n{}",
        args.join(" "),
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn profile_toml(duration_s: f64, rate_hz: f64, noise: f64, blocks: &str) -> String {
    format!("duration_s = {duration_s}\nrate_hz = {rate_hz}\nnoise_level = {noise}\n\n{blocks}")
}

/// Activation and angle sines used wherever a trial just has to exercise the
/// model; angles stay inside [88, 112] deg, clear of degenerate geometry.
const BLOCKS_A: &str = r#"[ta]
kind = "sine"
mean = 0.25
amplitude = 0.2
frequency_hz = 0.4

[gas]
kind = "sine"
mean = 0.35
amplitude = 0.3
frequency_hz = 0.25
phase_rad = 1.2

[angle]
kind = "sine"
mean = 100.0
amplitude = 12.0
frequency_hz = 0.5
"#;

/// A second, deliberately different excursion for held-out evaluation.
const BLOCKS_B: &str = r#"[ta]
kind = "sine"
mean = 0.3
amplitude = 0.25
frequency_hz = 0.3
phase_rad = 0.7

[gas]
kind = "sine"
mean = 0.3
amplitude = 0.22
frequency_hz = 0.35

[angle]
kind = "sine"
mean = 95.0
amplitude = 15.0
frequency_hz = 0.35
phase_rad = 0.5
"#;

fn report_metrics(path: &Path) -> (f64, f64) {
    let v: toml::Value = toml::from_str(&std::fs::read_to_string(path).unwrap()).unwrap();
    (
        v["metrics"]["nrmse"].as_float().unwrap(),
        v["metrics"]["r_squared"].as_float().unwrap(),
    )
}

#[test]
fn criterion_01_geometry_consistency() {
    let mut v = Verdict::new(1, "finite-difference d(l_mt)/dtheta matches -s*r(theta)");
    let started = Instant::now();
    let h_rad: f64 = 1e-6;
    let h_deg = h_rad.to_degrees();
    let mut worst = 0.0f64;
    for mp in [MuscleParams::default_plantarflexor(), MuscleParams::default_dorsiflexor()] {
        for i in 0..200 {
            let theta = 70.0 + 60.0 * i as f64 / 199.0;
            let fd =
                (mtu_length(theta + h_deg, &mp) - mtu_length(theta - h_deg, &mp)) / (2.0 * h_rad);
            let want = -mp.action_sign * moment_arm(theta, &mp).unwrap();
            let rel = ((fd - want) / want).abs();
            worst = worst.max(rel);
            v.check(rel <= 1e-6, || {
                format!(
                    "sign {:+} theta {theta:.3}: slope {fd:.9} vs {want:.9} (rel {rel:.2e})",
                    mp.action_sign
                )
            });
        }
    }
    let dt = started.elapsed();
    v.check(dt < Duration::from_secs(1), || format!("took {dt:?}, budget 1 s"));
    v.finish(format!("worst relative gap {worst:.1e} over 2 x 200 angles, {dt:?}"));
}

#[test]
fn criterion_02_hill_curve_fixtures() {
    let mut v = Verdict::new(2, "force-length / force-velocity / passive fixtures");
    let e_inv = (-1.0f64).exp();
    for mp in [MuscleParams::default_plantarflexor(), MuscleParams::default_dorsiflexor()] {
        let tag = if mp.action_sign > 0.0 { "plant" } else { "dorsi" };

        let at_opt = force_length(mp.l_opt, &mp);
        v.check((at_opt - 1.0).abs() < 1e-15, || format!("{tag}: F_l(l_opt) = {at_opt}"));
        for sgn in [1.0, -1.0] {
            let fl = force_length(mp.l_opt * (1.0 + sgn * mp.w), &mp);
            v.check((fl - e_inv).abs() <= 1e-6, || {
                format!("{tag}: F_l at one bell width ({sgn:+}) = {fl:.9}, want {e_inv:.9}")
            });
        }

        // Both branches must meet at v = 0 with unit scaling. A negative
        // subnormal forces the shortening branch; exact zero takes the
        // lengthening branch.
        let con = force_velocity(-1e-300, &mp);
        let ecc = force_velocity(0.0, &mp);
        v.check((con - ecc).abs() < 1e-12, || format!("{tag}: branch gap {:e}", con - ecc));
        v.check((con - 1.0).abs() < 1e-12, || format!("{tag}: F_v(0-) = {con}"));
        v.check((ecc - 1.0).abs() < 1e-12, || format!("{tag}: F_v(0+) = {ecc}"));

        let at_vmax = force_velocity(mp.v_max, &mp);
        v.check(at_vmax == 0.0, || format!("{tag}: F_v(v_max) = {at_vmax}"));
        let half = force_velocity(-5.0, &mp);
        v.check((half - 1.0 / 7.0).abs() <= 1e-5, || {
            format!("{tag}: F_v(-5 l_opt/s) = {half:.7}, want {:.7}", 1.0 / 7.0)
        });
        let ecc2 = force_velocity(2.0, &mp);
        v.check((ecc2 - 1.45327).abs() <= 1e-5, || {
            format!("{tag}: F_v(+2 l_opt/s) = {ecc2:.7}, want 1.45327")
        });

        let fpe = passive_force(mp.l_opt * 1.56, &mp);
        v.check(((fpe - mp.f_max) / mp.f_max).abs() <= 1e-9, || {
            format!("{tag}: F_pe at reference strain = {fpe:.6}, want f_max {}", mp.f_max)
        });
    }
    v.finish("both muscles hit every pinned curve point".to_string());
}

#[test]
fn criterion_03_activation_recursion() {
    let mut v = Verdict::new(3, "recursion poles, steady state, delay");
    let params = NeuralCoeffs::default().with_shape(0.0);

    let (z1, z2) = params.poles();
    let (hi, lo) = (z1.abs().max(z2.abs()), z1.abs().min(z2.abs()));
    v.check((hi - 0.0405).abs() <= 1e-3, || format!("large pole {hi:.6}, want 0.0405"));
    v.check((lo - 0.0155).abs() <= 1e-3, || format!("small pole {lo:.6}, want 0.0155"));

    let gain = params.steady_state_gain();
    v.check((gain - 1.0042).abs() <= 1e-4, || format!("analytic gain {gain:.6}, want 1.0042"));

    // A simulated unit step must converge to the same pre-clamp value.
    let fs = 1000.0;
    let mut st = ActivationState::new(params, fs).unwrap();
    let mut settled = 0.0;
    for _ in 0..500 {
        st.step(1.0);
        settled = st.last_neural_raw();
    }
    v.check((settled - 1.0042).abs() <= 1e-4, || {
        format!("simulated steady state {settled:.6}, want 1.0042")
    });

    // An impulse must surface after exactly the configured delay.
    let d = params.delay_samples(fs);
    let mut st = ActivationState::new(params, fs).unwrap();
    let mut first_nonzero = None;
    for k in 0..(4 * d + 8) {
        st.step(if k == 0 { 1.0 } else { 0.0 });
        if first_nonzero.is_none() && st.last_neural_raw() != 0.0 {
            first_nonzero = Some(k);
        }
    }
    v.check(first_nonzero == Some(d), || {
        format!("impulse surfaced at sample {first_nonzero:?}, want Some({d})")
    });
    v.finish(format!(
        "poles ({hi:.4}, {lo:.4}), steady state {settled:.5}, delay {d} samples at {fs} Hz"
    ));
}

/// Recomputes the plantarflexor's static torque at theta = 90 deg, omega = 0,
/// a = 1 from literal constants and std math only. Deliberately calls no
/// library function: the fixture and the model can only agree if both encode
/// the same chain of geometry and force relations.
fn straight_line_static_torque() -> f64 {
    let f_max = 4800.0;
    let l_opt = 0.0402;
    let r_max = 0.0375;
    let theta_max_deg: f64 = 112.0;
    let theta_ref_deg: f64 = 70.0;
    let phi_ref_deg: f64 = 0.0;
    let l_slack = 0.0;
    let w = 0.56;
    let k = 5.0;
    let n_ecc = 1.5;
    let v_max = -10.0;
    let s = 1.0;

    let theta: f64 = 90.0;
    let a = 1.0;

    let r = r_max * (theta - theta_max_deg).to_radians().cos();
    let l_mt = l_opt * phi_ref_deg.to_radians().cos()
        + l_slack
        + s * r_max
            * ((theta_max_deg - theta).to_radians().sin()
                - (theta_max_deg - theta_ref_deg).to_radians().sin());
    let p = l_mt - l_slack;
    assert!(p > 0.0, "fixture geometry must be non-degenerate");
    let thickness = l_opt * phi_ref_deg.to_radians().sin();
    let l_ce = (p * p + thickness * thickness).sqrt();
    let cos_phi = p / l_ce;

    let x = (l_opt - l_ce) / (l_opt * w);
    let f_l = (-x * x).exp();
    let v_ce = 0.0;
    let f_v = n_ecc + (n_ecc - 1.0) * (v_max + v_ce) / (7.56 * k * v_ce - v_max);
    let strain = (l_ce - l_opt) / (l_opt * 0.56);
    let f_pe = if l_ce > l_opt { f_max * strain * strain } else { 0.0 };

    let force = (f_max * f_l * f_v * a + f_pe) * cos_phi;
    -force * r
}

#[test]
fn criterion_04_static_torque_fixture() {
    let mut v = Verdict::new(4, "static plantarflexor torque fixture");
    let script = straight_line_static_torque();
    v.check((script - (-131.2)).abs() <= 0.5, || {
        format!("straight-line value {script:.4} N*m outside -131.2 +/- 0.5")
    });

    // Net model torque at the same state: the dorsiflexor is silent and its
    // passive element is slack at 90 deg, so the whole torque is the
    // plantarflexor's.
    let model = AnkleModel::default();
    let lib = ankle_torque(0.0, 1.0, 90.0, 0.0, &model).unwrap();
    v.check((lib - (-131.2)).abs() <= 0.5, || {
        format!("model value {lib:.4} N*m outside -131.2 +/- 0.5")
    });
    v.check(((lib - script) / script).abs() <= 1e-9, || {
        format!("model {lib:.10} vs straight-line {script:.10} disagree beyond 1e-9 relative")
    });
    v.finish(format!("straight-line {script:.3} N*m, model {lib:.3} N*m"));
}

/// Clean 30 s at 1 kHz -> synth -> predict -> eval; returns every file the
/// pipeline wrote so determinism checks can compare reruns byte for byte.
fn run_oracle_round_trip(dir: &Path) -> Vec<PathBuf> {
    std::fs::write(dir.join("profile.toml"), profile_toml(30.0, 1000.0, 0.0, BLOCKS_A)).unwrap();
    run_ok(
        dir,
        &[
            "synth", "--profile", "profile.toml", "--out", "trial.csv", "--seed", "42",
            "--emit-model", "model.toml",
        ],
    );
    run_ok(
        dir,
        &["predict", "--data", "trial.csv", "--model", "model.toml", "--out", "pred.csv"],
    );
    run_ok(
        dir,
        &[
            "eval", "--data", "trial.csv", "--pred", "pred.csv", "--skip-ms", "200", "--out",
            "report.toml",
        ],
    );
    ["trial.csv", "model.toml", "pred.csv", "report.toml"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

#[test]
fn criterion_05_oracle_round_trip() {
    let mut v = Verdict::new(5, "noise-free synth -> predict -> eval");
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let files = run_oracle_round_trip(dir.path());
    let dt = started.elapsed();

    let (nrmse, r2) = report_metrics(&files[3]);
    v.check(nrmse <= 0.01, || format!("NRMSE {nrmse:.6} > 0.01"));
    v.check(r2 >= 0.999, || format!("R2 {r2:.6} < 0.999"));
    v.check(dt < Duration::from_secs(10), || format!("pipeline took {dt:?}, budget 10 s"));
    v.finish(format!("NRMSE {nrmse:.1e}, R2 {r2:.6}, 30 s at 1 kHz in {dt:.1?}"));
}

/// Noisy 6 s at 200 Hz -> 64-start fit -> prediction on a held-out trial with
/// different trajectories and a different noise seed.
fn run_fit_recovery(dir: &Path) -> Vec<PathBuf> {
    std::fs::write(dir.join("train.toml"), profile_toml(6.0, 200.0, 0.05, BLOCKS_A)).unwrap();
    std::fs::write(dir.join("holdout.toml"), profile_toml(6.0, 200.0, 0.05, BLOCKS_B)).unwrap();
    run_ok(dir, &["synth", "--profile", "train.toml", "--out", "train.csv", "--seed", "11"]);
    run_ok(dir, &["synth", "--profile", "holdout.toml", "--out", "holdout.csv", "--seed", "12"]);
    run_ok(
        dir,
        &["fit", "--data", "train.csv", "--out", "fitted.toml", "--starts", "64", "--seed", "42"],
    );
    run_ok(
        dir,
        &["predict", "--data", "holdout.csv", "--model", "fitted.toml", "--out", "pred.csv"],
    );
    run_ok(
        dir,
        &[
            "eval", "--data", "holdout.csv", "--pred", "pred.csv", "--skip-ms", "200", "--out",
            "report.toml",
        ],
    );
    ["train.csv", "holdout.csv", "fitted.toml", "fitted.report.toml", "pred.csv", "report.toml"]
        .iter()
        .map(|f| dir.join(f))
        .collect()
}

#[test]
fn criterion_06_fit_recovery() {
    let mut v = Verdict::new(6, "fit recovers the generator on held-out data");
    let dir = tempfile::tempdir().unwrap();
    let started = Instant::now();
    let files = run_fit_recovery(dir.path());
    let dt = started.elapsed();

    let (nrmse, r2) = report_metrics(&files[5]);
    v.check(nrmse <= 0.05, || format!("held-out NRMSE {nrmse:.6} > 0.05"));
    v.check(r2 >= 0.98, || format!("held-out R2 {r2:.6} < 0.98"));
    v.check(dt < Duration::from_secs(300), || format!("pipeline took {dt:?}, budget 5 min"));

    let doc = ModelDocument::load(&files[2]).unwrap();
    let inside = Bounds::default().contains(&ParamVector::from_model(&doc.model()));
    v.check(inside, || "fitted parameters escaped the search bounds".to_string());
    v.finish(format!("held-out NRMSE {nrmse:.4}, R2 {r2:.4}, 64 starts in {dt:.1?}"));
}

#[test]
fn criterion_07_metric_fixtures() {
    let mut v = Verdict::new(7, "NRMSE offset identity and R2 affine invariance");
    let reference: Vec<f64> = (0..512).map(|i| 37.0 * (0.11 * i as f64).sin() + 5.0).collect();
    let (lo, hi) = reference
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    let range = hi - lo;

    for c in [0.25, 1.0, 13.7] {
        let shifted: Vec<f64> = reference.iter().map(|r| r + c).collect();
        let got = nrmse(&shifted, &reference).unwrap();
        let want = c / range;
        v.check((got - want).abs() <= 1e-12, || {
            format!("nrmse(ref + {c}) = {got:.15}, want {want:.15}")
        });
    }

    let pred: Vec<f64> = reference
        .iter()
        .enumerate()
        .map(|(i, r)| r + 3.0 * (0.21 * i as f64).cos())
        .collect();
    let base = r_squared(&pred, &reference).unwrap();
    for (a, b) in [(2.0, 0.0), (0.5, -3.0), (10.0, 100.0), (-1.5, 2.0)] {
        let mapped: Vec<f64> = pred.iter().map(|p| a * p + b).collect();
        let got = r_squared(&mapped, &reference).unwrap();
        v.check((got - base).abs() <= 1e-12, || {
            format!("r_squared under ({a} p + {b}) moved by {:e}", got - base)
        });
    }
    v.finish(format!("range {range:.2}, base R2 {base:.6}"));
}

#[test]
fn criterion_08_online_offline_equivalence() {
    let mut v = Verdict::new(8, "TCP streaming reproduces batch prediction");
    let mut doc = ModelDocument::default();
    doc.pipeline = PipelineConfig {
        velocity_mode: VelocityMode::Causal,
        velocity_lowpass_hz: 6.0,
        ..PipelineConfig::default()
    };
    let fs = 1000.0;
    let profile =
        SyntheticProfile { duration_s: 10.0, rate_hz: fs, noise_level: 0.0, ..Default::default() };
    let trial = generate_trial(&doc.model(), &doc.pipeline, &profile, 42).unwrap();
    let batch = predict_trial(&trial, &doc.model(), &doc.pipeline).unwrap();

    // Private runtime so dropping it tears the server down with the test.
    let runtime = tokio::runtime::Builder::new_multi_thread()
        .worker_threads(2)
        .enable_all()
        .build()
        .unwrap();
    let (addr_tx, addr_rx) = std::sync::mpsc::channel();
    let config = ServeConfig { rate_hz: fs, ..ServeConfig::default() };
    runtime.spawn(async move {
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        addr_tx.send(listener.local_addr().unwrap()).unwrap();
        let _ = serve(listener, &doc, config).await;
    });
    let addr = addr_rx.recv().unwrap();

    let mut client = Client::connect(addr, fs).unwrap();
    let responses = client.stream_trial(&trial).unwrap();
    drop(runtime);

    v.check(responses.len() == trial.len(), || {
        format!("{} responses for {} samples", responses.len(), trial.len())
    });
    let mut worst = 0.0f64;
    for (i, resp) in responses.iter().enumerate() {
        let gap = (resp.tau_cmd - batch.tau_nm[i])
            .abs()
            .max((resp.a_ta - batch.a_ta[i]).abs())
            .max((resp.a_gas - batch.a_gas[i]).abs());
        worst = worst.max(gap);
        v.check(gap <= 1e-9, || {
            format!("sample {i}: streamed vs batch gap {gap:e} (tau {})", resp.tau_cmd)
        });
    }

    let mut lat: Vec<u64> = responses.iter().map(|r| r.lat_us).collect();
    lat.sort_unstable();
    let n = lat.len();
    let (p50, p99, max) = (lat[n / 2], lat[(n * 99) / 100], lat[n - 1]);
    let period_us = 1_000_000 / fs as u64;
    let misses = lat.iter().filter(|&&l| l >= period_us).count();
    v.check(misses == 0, || format!("{misses} ticks ran past the {period_us} us period"));
    v.check(p50 < 100, || format!("median latency {p50} us >= 100 us"));
    v.check(p99 < 1000, || format!("p99 latency {p99} us >= 1 ms"));
    v.finish(format!(
        "worst per-sample gap {worst:.1e}, latency p50 {p50} / p99 {p99} / max {max} us over {n} ticks"
    ));
}

#[test]
fn criterion_09_filter_response() {
    let mut v = Verdict::new(9, "high-pass response at cutoff and in the stop band");
    let spec = design_highpass(1000.0, 40.0, 4).unwrap();

    let at_cut = spec.gain_at(40.0);
    v.check((at_cut - 0.7071).abs() <= 0.007, || {
        format!("|H(40)| = {at_cut:.6}, want 0.7071 +/- 0.007")
    });

    let mut worst_low = 0.0f64;
    let mut f = 0.25;
    while f < 5.0 {
        let g = spec.gain_at(f);
        worst_low = worst_low.max(g);
        v.check(g < 0.01, || format!("|H({f:.2})| = {g:.2e} >= 0.01"));
        f += 0.25;
    }
    v.finish(format!("|H(40)| = {at_cut:.4}, max |H| below 5 Hz = {worst_low:.1e}"));
}

/// Synth -> serve (child process, ephemeral port) -> replay. The replay file
/// holds only deterministic columns, so reruns must match byte for byte.
fn run_replay_pipeline(dir: &Path) -> Vec<PathBuf> {
    std::fs::write(dir.join("profile.toml"), profile_toml(10.0, 1000.0, 0.0, BLOCKS_A)).unwrap();
    run_ok(
        dir,
        &[
            "synth", "--profile", "profile.toml", "--out", "drive.csv", "--seed", "42",
            "--emit-model", "model.toml",
        ],
    );

    let mut server = Command::new(BIN)
        .args(["serve", "--model", "model.toml", "--port", "0", "--rate", "1000"])
        .current_dir(dir)
        .stdout(Stdio::piped())
        .spawn()
        .unwrap();
    let mut first_line = String::new();
    BufReader::new(server.stdout.as_mut().unwrap()).read_line(&mut first_line).unwrap();
    let addr = first_line.trim().strip_prefix("listening on ").unwrap().to_owned();

    let out = run_in(
        dir,
        &["replay", "--data", "drive.csv", "--addr", &addr, "--out", "replay.csv"],
    );
    server.kill().unwrap();
    server.wait().unwrap();
    assert!(out.status.success(), "replay failed:\n{}", String::from_utf8_lossy(&out.stderr));

    ["drive.csv", "model.toml", "replay.csv"].iter().map(|f| dir.join(f)).collect()
}

#[test]
fn criterion_10_determinism() {
    let mut v = Verdict::new(10, "identical seeds give byte-identical output files");
    let dir = tempfile::tempdir().unwrap();
    let pipelines: [(&str, fn(&Path) -> Vec<PathBuf>); 3] = [
        ("round-trip", run_oracle_round_trip),
        ("fit", run_fit_recovery),
        ("replay", run_replay_pipeline),
    ];

    let mut compared = 0usize;
    for (label, pipeline) in pipelines {
        let first = dir.path().join(format!("{label}-a"));
        let second = dir.path().join(format!("{label}-b"));
        std::fs::create_dir_all(&first).unwrap();
        std::fs::create_dir_all(&second).unwrap();
        let files_a = pipeline(&first);
        let files_b = pipeline(&second);
        for (pa, pb) in files_a.iter().zip(&files_b) {
            let bytes_a = std::fs::read(pa).unwrap();
            let bytes_b = std::fs::read(pb).unwrap();
            v.check(bytes_a == bytes_b, || {
                format!("{label}: {} differs between reruns", pa.file_name().unwrap().to_string_lossy())
            });
            compared += 1;
        }
    }
    v.finish(format!("{compared} output files byte-identical across reruns"));
}
