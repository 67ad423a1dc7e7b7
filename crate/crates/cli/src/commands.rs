//! Subcommand implementations. Every output file's bytes are a pure function
//! of the input files and the seed: provenance carries content hashes and
//! never timestamps.

use std::path::{Path, PathBuf};

use ankle_msk::config::{file_sha256, InputHash, FORMAT_VERSION};
use ankle_msk::evaluation::r_squared_cod;
use ankle_msk::fitting::FitReportDocument;
use ankle_msk::signal::{calibrate_mvc_channel, design_highpass, PeakDetection, RawEmgSeries};
use ankle_msk::{
    fit, generate_trial, load_trial, normalize_and_average, nrmse, predict_trial, r_squared,
    save_trial, segment_repetitions, Bounds, Error, EvalDocument, FitConfig, MetricReport,
    ModelDocument, MvcDocument, PipelineConfig, Provenance, SegmentParams, SyntheticProfile,
    TrialRecording,
};
use ankle_msk_rt::{serve, Client, PlantConfig, PlantMode, ServeConfig};

use crate::table::{read_table, write_table};
use crate::{
    EvalArgs, FitArgs, MvcArgs, PlantArg, PredictArgs, ReplayArgs, ServeArgs, SynthArgs,
};

type CmdResult = Result<(), Box<dyn std::error::Error>>;

fn provenance(source: &str, seed: Option<u64>, inputs: &[&Path]) -> ankle_msk::Result<Provenance> {
    Ok(Provenance {
        source: source.into(),
        seed,
        inputs: inputs
            .iter()
            .map(InputHash::of_file)
            .collect::<ankle_msk::Result<_>>()?,
    })
}

pub fn mvc(args: &MvcArgs) -> CmdResult {
    let trial = load_trial(&args.data)?;
    let pipeline = PipelineConfig::default();
    let filter = design_highpass(trial.fs_hz, pipeline.filter_cutoff_hz, pipeline.filter_order)?;
    let detection = PeakDetection::default();
    let calibrate = |name: &str, samples: &[f64]| {
        calibrate_mvc_channel(
            name,
            &RawEmgSeries::new(samples.to_vec(), trial.fs_hz)?,
            &filter,
            pipeline.envelope_window_ms,
            detection,
        )
    };
    let ta = calibrate("ta", &trial.emg_ta)?;
    let gas = calibrate("gas", &trial.emg_gas)?;
    let doc = MvcDocument::new(ta, gas, provenance("mvc", None, &[&args.data])?);
    doc.save(&args.out)?;
    println!(
        "mvc constants: ta {:.6e} V, gas {:.6e} V -> {}",
        doc.ta.constant_v,
        doc.gas.constant_v,
        args.out.display()
    );
    Ok(())
}

fn default_report_path(model_out: &Path) -> PathBuf {
    model_out.with_extension("report.toml")
}

pub fn fit_cmd(args: &FitArgs) -> CmdResult {
    let trials: Vec<TrialRecording> =
        args.data.iter().map(load_trial).collect::<ankle_msk::Result<_>>()?;
    let mut template = ModelDocument::default();
    if let Some(mvc_path) = &args.mvc {
        let mvc = MvcDocument::load(mvc_path)?;
        template.pipeline.mvc_ta_v = mvc.ta.constant_v;
        template.pipeline.mvc_gas_v = mvc.gas.constant_v;
    }
    let config = FitConfig {
        n_starts: args.starts,
        seed: args.seed,
        fit_shape: args.fit_shape,
        ..FitConfig::default()
    };
    let result = fit(&trials, &template.model(), &template.pipeline, &Bounds::default(), &config)?;

    let mut inputs: Vec<&Path> = args.data.iter().map(PathBuf::as_path).collect();
    if let Some(mvc_path) = &args.mvc {
        inputs.push(mvc_path);
    }
    let prov = provenance("fit", Some(args.seed), &inputs)?;
    let fitted = result.model(&template.model());
    let model_doc = ModelDocument::from_model(&fitted, template.pipeline, prov.clone());
    model_doc.save(&args.out)?;
    let report_path = args.report.clone().unwrap_or_else(|| default_report_path(&args.out));
    FitReportDocument::new(&result, prov).save(&report_path)?;
    println!(
        "fit: objective {:.6e} (N·m)^2 over {} start(s), model {} -> {}, report -> {}",
        result.objective,
        result.starts.len(),
        model_doc.canonical_hash(),
        args.out.display(),
        report_path.display()
    );
    Ok(())
}

pub fn predict(args: &PredictArgs) -> CmdResult {
    let doc = ModelDocument::load(&args.model)?;
    let trial = load_trial(&args.data)?;
    let pred = predict_trial(&trial, &doc.model(), &doc.pipeline)?;
    if pred.clamp_ta + pred.clamp_gas > 0 {
        log::warn!(
            "excitation clamped at 1 on {} TA and {} GAS sample(s); MVC calibration may be low",
            pred.clamp_ta,
            pred.clamp_gas
        );
    }
    let comments = vec![
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("source".to_string(), "predict".to_string()),
        ("model_sha256".to_string(), file_sha256(&args.model)?),
        ("data_sha256".to_string(), file_sha256(&args.data)?),
    ];
    write_table(
        &args.out,
        &comments,
        &["time", "tau_pred", "a_ta", "a_gas"],
        &[&pred.time, &pred.tau_nm, &pred.a_ta, &pred.a_gas],
    )?;
    println!("predicted {} samples -> {}", pred.time.len(), args.out.display());
    Ok(())
}

pub fn eval(args: &EvalArgs) -> CmdResult {
    let trial = load_trial(&args.data)?;
    let reference = trial.ankle_torque_ref.as_deref().ok_or_else(|| {
        Error::InvalidInput(format!(
            "{}: no ankle_torque_ref column to evaluate against",
            args.data.display()
        ))
    })?;
    let table = read_table(&args.pred)?;
    if let Some((_, v)) = table.comments.iter().find(|(k, _)| k == "format_version") {
        if *v != FORMAT_VERSION.to_string() {
            return Err(Error::InvalidInput(format!(
                "{}: unsupported format_version {v}",
                args.pred.display()
            ))
            .into());
        }
    }
    let pred = table
        .column("tau_pred")
        .or_else(|| table.column("tau_cmd"))
        .ok_or_else(|| {
            Error::InvalidInput(format!(
                "{}: no tau_pred or tau_cmd column",
                args.pred.display()
            ))
        })?;
    if table.len() != trial.len() {
        return Err(Error::InvalidInput(format!(
            "length mismatch: {} prediction row(s) vs {} reference sample(s)",
            table.len(),
            trial.len()
        ))
        .into());
    }
    let skip = ((args.skip_ms / 1000.0) * trial.fs_hz).round() as usize;
    if args.skip_ms < 0.0 || skip + 2 > trial.len() {
        return Err(Error::InvalidInput(format!(
            "--skip-ms {} leaves fewer than 2 of {} samples",
            args.skip_ms,
            trial.len()
        ))
        .into());
    }
    let (p, r) = (&pred[skip..], &reference[skip..]);
    let segments = match args.segment {
        Some(method) => {
            Some(segment_repetitions(&trial, method.into(), &SegmentParams::default())?)
        }
        None => None,
    };
    if let Some(curves_path) = &args.curves {
        let segs = segments.as_ref().expect("clap enforces --segment with --curves");
        let reference_set = normalize_and_average(reference, segs, 101)?;
        let pred_set = normalize_and_average(pred, segs, 101)?;
        let pct: Vec<f64> = (0..101).map(|j| j as f64).collect();
        write_table(
            curves_path,
            &[
                ("format_version".to_string(), FORMAT_VERSION.to_string()),
                ("source".to_string(), "eval curves".to_string()),
                ("repetitions".to_string(), segs.len().to_string()),
            ],
            &["pct", "ref_mean", "ref_sd", "pred_mean", "pred_sd"],
            &[&pct, &reference_set.mean, &reference_set.sd, &pred_set.mean, &pred_set.sd],
        )?;
    }
    let task = args.task.clone().unwrap_or_else(|| {
        args.data
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "eval".into())
    });
    let metrics = MetricReport {
        nrmse: nrmse(p, r)?,
        r_squared: r_squared(p, r)?,
        r_squared_cod: r_squared_cod(p, r)?,
        n_repetitions: segments.as_ref().map_or(1, Vec::len),
        task,
    };
    let doc = EvalDocument {
        format_version: FORMAT_VERSION,
        provenance: provenance("eval", None, &[&args.data, &args.pred])?,
        skip_ms: args.skip_ms,
        segment: args.segment.map(Into::into),
        metrics,
    };
    doc.save(&args.out)?;
    println!(
        "eval: nrmse {:.6} r_squared {:.6} (cod {:.6}) over {} repetition(s) -> {}",
        doc.metrics.nrmse,
        doc.metrics.r_squared,
        doc.metrics.r_squared_cod,
        doc.metrics.n_repetitions,
        args.out.display()
    );
    Ok(())
}

pub fn synth(args: &SynthArgs) -> CmdResult {
    let doc = match &args.model {
        Some(path) => ModelDocument::load(path)?,
        None => ModelDocument::default(),
    };
    let profile = match &args.profile {
        Some(path) => SyntheticProfile::load(path)?,
        None => SyntheticProfile::default(),
    };
    let trial = generate_trial(&doc.model(), &doc.pipeline, &profile, args.seed)?;
    let mut comments = vec![
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("source".to_string(), "synth".to_string()),
        ("seed".to_string(), args.seed.to_string()),
        ("model_sha256".to_string(), doc.canonical_hash()),
    ];
    if let Some(path) = &args.model {
        comments.push(("model_file_sha256".to_string(), file_sha256(path)?));
    }
    if let Some(path) = &args.profile {
        comments.push(("profile_sha256".to_string(), file_sha256(path)?));
    }
    save_trial(&args.out, &trial, &comments)?;
    if let Some(path) = &args.emit_model {
        doc.save(path)?;
    }
    println!(
        "synthesized {} samples at {} Hz (noise {}) -> {}",
        trial.len(),
        trial.fs_hz,
        profile.noise_level,
        args.out.display()
    );
    Ok(())
}

pub fn serve_cmd(args: &ServeArgs) -> CmdResult {
    let doc = ModelDocument::load(&args.model)?;
    let plant = PlantConfig {
        mode: match args.plant {
            PlantArg::Torque => PlantMode::TorqueTracking,
            PlantArg::Impedance => PlantMode::ImpedanceAngle,
        },
        lag_ms: args.lag_ms,
        saturation_nm: args.saturation_nm,
        k_p_nm_per_deg: args.stiffness,
        neutral_deg: args.neutral_deg,
    };
    let config = ServeConfig { rate_hz: args.rate, plant, ..ServeConfig::default() };
    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build()?;
    runtime.block_on(async {
        let listener = tokio::net::TcpListener::bind((args.host.as_str(), args.port)).await?;
        // The bound address goes to stdout so callers using port 0 can find
        // the service.
        println!("listening on {}", listener.local_addr()?);
        use std::io::Write as _;
        std::io::stdout().flush()?;
        serve(listener, &doc, config).await?;
        Ok::<(), Box<dyn std::error::Error>>(())
    })
}

pub fn replay(args: &ReplayArgs) -> CmdResult {
    let trial = load_trial(&args.data)?;
    let rate = args.rate.unwrap_or(trial.fs_hz);
    let mut client = Client::connect(args.addr.as_str(), rate)?;
    let responses = client.stream_trial(&trial)?;

    let n = responses.len();
    let mut lat: Vec<u64> = responses.iter().map(|r| r.lat_us).collect();
    lat.sort_unstable();
    let comments = vec![
        ("format_version".to_string(), FORMAT_VERSION.to_string()),
        ("source".to_string(), "replay".to_string()),
        ("model_sha256".to_string(), client.model_hash().to_string()),
        ("data_sha256".to_string(), file_sha256(&args.data)?),
    ];
    // Latency is a measurement of this run, not of the model; it goes to
    // stdout only so replay output files are byte-identical across reruns.
    let col = |f: fn(&ankle_msk_rt::TickResponse) -> f64| -> Vec<f64> {
        responses.iter().map(f).collect()
    };
    let columns = [
        col(|r| r.t),
        col(|r| r.tau_cmd),
        col(|r| r.tau_meas),
        col(|r| r.theta_plant),
        col(|r| r.a_ta),
        col(|r| r.a_gas),
    ];
    write_table(
        &args.out,
        &comments,
        &["time", "tau_cmd", "tau_meas", "theta_plant", "a_ta", "a_gas"],
        &columns.iter().map(Vec::as_slice).collect::<Vec<_>>(),
    )?;
    println!(
        "replayed {} samples: latency p50 {} µs, p99 {} µs, max {} µs -> {}",
        n,
        lat[n / 2],
        lat[(n * 99) / 100],
        lat[n - 1],
        args.out.display()
    );
    Ok(())
}
