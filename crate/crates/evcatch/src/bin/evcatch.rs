//! Command-line driver: synthetic scene generation, offline pipeline runs,
//! Monte-Carlo evaluation, the latency model and a throughput bench.

use clap::{Args, Parser, Subcommand, ValueEnum};
use evcatch::catchsim::{
    bin_by_speed, evaluate_throws, sample_throws, CatcherConfig,
};
use evcatch::config::PipelineConfig;
use evcatch::formats::{
    read_events, read_imu, read_odometry, write_events, write_ground_truth, write_imu,
    write_jsonl, write_odometry, EventFile,
};
use evcatch::latency::{worst_case_latency, LatencyMode, LatencyParams};
use evcatch::pipeline::{run_offline, PipelineInput};
use evcatch::simgen::{generate, RotationSegment, SceneConfig, ThrowSpec};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

/// Validation problems (bad arguments, config, input files) exit with 1;
/// runtime failures exit with 2.
const EXIT_VALIDATION: u8 = 1;
const EXIT_RUNTIME: u8 = 2;

#[derive(Parser)]
#[command(name = "evcatch", version, about = "Event-camera ball catching toolkit")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic throw scene (events, IMU, odometry, truth).
    Generate(GenerateArgs),
    /// Run the detection pipeline on recorded streams.
    Run(RunArgs),
    /// Monte-Carlo throw evaluation of the full pipeline plus catcher.
    Evaluate(EvaluateArgs),
    /// Closed-form worst-case latency model.
    Latency(LatencyArgs),
    /// Pipeline throughput benchmark.
    Bench(BenchArgs),
}

#[derive(Args)]
struct GenerateArgs {
    /// Output directory (created if missing).
    #[arg(short, long)]
    output: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Throw speed, m/s.
    #[arg(long, default_value_t = 7.0)]
    speed: f64,
    /// Launch distance along body x, m.
    #[arg(long, default_value_t = 4.0)]
    distance: f64,
    /// Aim offset from the net home in the catch plane, m.
    #[arg(long, default_value_t = 0.0)]
    deviation: f64,
    /// Constant body yaw rate, rad/s.
    #[arg(long, default_value_t = 0.0)]
    yaw_rate: f64,
    /// Scene duration, s; 0 = flight time plus margin.
    #[arg(long, default_value_t = 0.0)]
    duration: f64,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    events: PathBuf,
    #[arg(long)]
    imu: PathBuf,
    #[arg(long)]
    odometry: PathBuf,
    /// Pipeline config TOML; defaults apply when omitted.
    #[arg(short, long)]
    config: Option<PathBuf>,
    /// Output directory for detections/impacts/timing logs.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long, default_value_t = 50)]
    throws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Throws slower than ~6 m/s cannot reach the net from the default
    /// 4 m launch distance and would be resampled away.
    #[arg(long, default_value_t = 6.0)]
    speed_min: f64,
    #[arg(long, default_value_t = 9.0)]
    speed_max: f64,
    #[arg(long, default_value_t = 0.4)]
    deviation_max: f64,
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    /// Worker threads; 0 = all cores.
    #[arg(long, default_value_t = 0)]
    threads: usize,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliLatencyMode {
    FrameTwoShot,
    EventTwoShot,
    EventOneShot,
}

#[derive(Args)]
struct LatencyArgs {
    /// Inter-frame interval, s (frame cameras).
    #[arg(long, default_value_t = 1.0 / 30.0)]
    dt_fps: f64,
    /// Per-detection compute time, s.
    #[arg(long)]
    dt_c: f64,
    #[arg(long, value_enum, default_value_t = CliLatencyMode::EventTwoShot)]
    mode: CliLatencyMode,
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Scene length to process, s.
    #[arg(long, default_value_t = 2.0)]
    seconds: f64,
    /// Baseline JSON to compare against (fails on >20% p99 regression);
    /// written when absent.
    #[arg(long)]
    baseline: Option<PathBuf>,
}

fn load_config(path: &Option<PathBuf>) -> Result<PipelineConfig, String> {
    match path {
        Some(p) => PipelineConfig::load(p).map_err(|e| e.to_string()),
        None => Ok(PipelineConfig::default()),
    }
}

fn ensure_dir(p: &Path) -> Result<(), String> {
    std::fs::create_dir_all(p).map_err(|e| format!("cannot create {}: {e}", p.display()))
}

fn cmd_generate(a: &GenerateArgs) -> Result<(), (u8, String)> {
    let validation = |m: String| (EXIT_VALIDATION, m);
    let runtime = |m: String| (EXIT_RUNTIME, m);
    if a.speed <= 0.0 || a.distance <= 0.0 {
        return Err(validation("speed and distance must be positive".into()));
    }
    let home = CatcherConfig::default().home;
    let start = evcatch::geometry::Vec3::new(a.distance, 0.0, 1.0);
    let target = evcatch::geometry::Vec3::new(0.0, home[0], home[1] + a.deviation);
    let spec = evcatch::catchsim::aimed_throw(&start, &target, a.speed, 0.02, 0.1)
        .ok_or_else(|| validation(format!("{} m/s cannot reach the target from {} m", a.speed, a.distance)))?;
    let mut scene = SceneConfig::vga_default(a.seed);
    if a.yaw_rate != 0.0 {
        scene.rotation_profile = vec![RotationSegment {
            start: 0.0,
            omega: [0.0, 0.0, a.yaw_rate],
        }];
    }
    scene.duration = if a.duration > 0.0 {
        a.duration
    } else {
        let p = spec.parabola();
        evcatch::impact::intersect(&p, &evcatch::impact::CatchPlane::default(), 0.0)
            .map(|i| i.t_imp + 0.03)
            .unwrap_or(1.0)
    };
    let sim = generate(&scene, &spec).map_err(|e| validation(e.to_string()))?;
    ensure_dir(&a.output).map_err(runtime)?;
    let intr = scene.intrinsics;
    write_events(
        &a.output.join("events.evt"),
        &EventFile {
            width: intr.width as u16,
            height: intr.height as u16,
            epoch: 0,
            events: sim.events.clone(),
        },
    )
    .map_err(|e| runtime(e.to_string()))?;
    write_imu(&a.output.join("imu.txt"), &sim.imu).map_err(|e| runtime(e.to_string()))?;
    write_odometry(&a.output.join("odometry.txt"), &sim.odometry)
        .map_err(|e| runtime(e.to_string()))?;
    write_ground_truth(&a.output.join("ground_truth.json"), &sim.ground_truth)
        .map_err(|e| runtime(e.to_string()))?;
    println!(
        "wrote {} events over {:.3} s to {}",
        sim.events.len(),
        scene.duration,
        a.output.display()
    );
    Ok(())
}

fn cmd_run(a: &RunArgs) -> Result<(), (u8, String)> {
    let validation = |m: String| (EXIT_VALIDATION, m);
    let runtime = |m: String| (EXIT_RUNTIME, m);
    let config = load_config(&a.config).map_err(|m| validation(m))?;
    let events = read_events(&a.events).map_err(|e| validation(e.to_string()))?;
    let imu = read_imu(&a.imu).map_err(|e| validation(e.to_string()))?;
    let odometry = read_odometry(&a.odometry).map_err(|e| validation(e.to_string()))?;
    let t_start = events.events.first().map(|e| e.t).unwrap_or(0);
    let t_end = events.events.last().map(|e| e.t + 1).unwrap_or(t_start);
    let out = run_offline(
        &config,
        &PipelineInput {
            events: &events.events,
            imu: &imu,
            odometry: &odometry,
            t_start,
            t_end,
        },
    )
    .map_err(|e| runtime(e.to_string()))?;
    let report = out.timings.report();
    println!(
        "{} windows, {} detections, {} impact predictions",
        out.windows,
        out.detections.len(),
        out.impacts.len()
    );
    if let Some(c) = &out.committed {
        println!(
            "committed impact at t={:.3} s, point ({:.3}, {:.3}, {:.3}) m",
            c.t_imp_s, c.p_imp_body[0], c.p_imp_body[1], c.p_imp_body[2]
        );
    }
    println!(
        "cycle p50 {:.3} ms, p99 {:.3} ms",
        report.cycle.p50 * 1e3,
        report.cycle.p99 * 1e3
    );
    if let Some(dir) = &a.output {
        ensure_dir(dir).map_err(runtime)?;
        write_jsonl(&dir.join("detections.jsonl"), &out.detections)
            .map_err(|e| runtime(e.to_string()))?;
        write_jsonl(&dir.join("impacts.jsonl"), &out.impacts)
            .map_err(|e| runtime(e.to_string()))?;
        std::fs::write(
            dir.join("timing.json"),
            serde_json::to_string_pretty(&report).expect("report serializes"),
        )
        .map_err(|e| runtime(e.to_string()))?;
    }
    Ok(())
}

fn cmd_evaluate(a: &EvaluateArgs) -> Result<(), (u8, String)> {
    let validation = |m: String| (EXIT_VALIDATION, m);
    let runtime = |m: String| (EXIT_RUNTIME, m);
    if a.speed_min <= 0.0 || a.speed_max <= a.speed_min {
        return Err(validation("need 0 < speed-min < speed-max".into()));
    }
    if a.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(a.threads)
            .build_global()
            .map_err(|e| runtime(e.to_string()))?;
    }
    let config = load_config(&a.config).map_err(validation)?;
    let catcher = CatcherConfig::default();
    let samples = sample_throws(
        a.throws,
        (a.speed_min, a.speed_max),
        a.deviation_max,
        4.0,
        a.seed,
    );
    let results =
        evaluate_throws(&config, &catcher, &samples, a.seed ^ 0x9e3779b97f4a7c15)
            .map_err(|e| runtime(e.to_string()))?;
    let edges: Vec<f64> = {
        let mut e = vec![a.speed_min];
        let step = (a.speed_max - a.speed_min) / 4.0;
        for i in 1..=4 {
            e.push(a.speed_min + step * i as f64);
        }
        e
    };
    let bins = bin_by_speed(&results, &edges, catcher.net_radius);
    let caught = results
        .iter()
        .filter(|r| r.outcome.map(|o| o.caught).unwrap_or(false))
        .count();
    println!(
        "{} throws: {} caught ({:.1}%)",
        results.len(),
        caught,
        100.0 * caught as f64 / results.len() as f64
    );
    println!("speed_lo,speed_hi,throws,caught,catch_rate,within_tolerance");
    for b in &bins {
        println!(
            "{:.2},{:.2},{},{},{:.3},{}",
            b.speed_lo,
            b.speed_hi,
            b.throws,
            b.caught,
            b.catch_rate(),
            b.within_tolerance
        );
    }
    if let Some(dir) = &a.output {
        ensure_dir(dir).map_err(runtime)?;
        write_jsonl(&dir.join("throws.jsonl"), &results).map_err(|e| runtime(e.to_string()))?;
        std::fs::write(
            dir.join("bins.json"),
            serde_json::to_string_pretty(&bins).expect("bins serialize"),
        )
        .map_err(|e| runtime(e.to_string()))?;
    }
    Ok(())
}

fn cmd_latency(a: &LatencyArgs) -> Result<(), (u8, String)> {
    if a.dt_c <= 0.0 || a.dt_fps < 0.0 {
        return Err((EXIT_VALIDATION, "need dt-c > 0 and dt-fps >= 0".into()));
    }
    let mode = match a.mode {
        CliLatencyMode::FrameTwoShot => LatencyMode::FrameTwoShot,
        CliLatencyMode::EventTwoShot => LatencyMode::EventTwoShot,
        CliLatencyMode::EventOneShot => LatencyMode::EventOneShot,
    };
    let report = worst_case_latency(&LatencyParams {
        dt_fps: a.dt_fps,
        dt_c: a.dt_c,
        mode,
    });
    println!(
        "{}",
        serde_json::to_string_pretty(&report).expect("report serializes")
    );
    Ok(())
}

#[derive(serde::Serialize, serde::Deserialize)]
struct BenchBaseline {
    schema_version: u32,
    cycle_p50_s: f64,
    cycle_p99_s: f64,
}

fn cmd_bench(a: &BenchArgs) -> Result<(), (u8, String)> {
    let runtime = |m: String| (EXIT_RUNTIME, m);
    let mut scene = SceneConfig::vga_default(a.seed);
    scene.duration = a.seconds;
    scene.rotation_profile = vec![RotationSegment {
        start: 0.0,
        omega: [0.0, 0.0, 0.3],
    }];
    let spec = ThrowSpec {
        p0_world: [4.0, 0.0, 1.0],
        v0_world: [-7.0, 0.2, 2.8],
        ball_diameter: 0.1,
        launch_time: 0.02,
    };
    let sim = generate(&scene, &spec).map_err(|e| runtime(e.to_string()))?;
    let config = PipelineConfig::default();
    let out = run_offline(
        &config,
        &PipelineInput {
            events: &sim.events,
            imu: &sim.imu,
            odometry: &sim.odometry,
            t_start: 0,
            t_end: (scene.duration * 1e9) as u64,
        },
    )
    .map_err(|e| runtime(e.to_string()))?;
    let report = out.timings.report();
    println!(
        "{} windows over {:.1} s of stream: cycle p50 {:.3} ms, p99 {:.3} ms, max {:.3} ms",
        out.windows,
        scene.duration,
        report.cycle.p50 * 1e3,
        report.cycle.p99 * 1e3,
        report.cycle.max * 1e3
    );
    if let Some(path) = &a.baseline {
        if path.exists() {
            let text = std::fs::read_to_string(path).map_err(|e| runtime(e.to_string()))?;
            let base: BenchBaseline =
                serde_json::from_str(&text).map_err(|e| (EXIT_VALIDATION, e.to_string()))?;
            let ratio = report.cycle.p99 / base.cycle_p99_s;
            println!(
                "baseline p99 {:.3} ms, current/baseline = {:.2}",
                base.cycle_p99_s * 1e3,
                ratio
            );
            if ratio > 1.2 {
                return Err(runtime(format!(
                    "p99 regressed {:.0}% over baseline",
                    (ratio - 1.0) * 100.0
                )));
            }
        } else {
            let base = BenchBaseline {
                schema_version: 1,
                cycle_p50_s: report.cycle.p50,
                cycle_p99_s: report.cycle.p99,
            };
            std::fs::write(
                path,
                serde_json::to_string_pretty(&base).expect("baseline serializes"),
            )
            .map_err(|e| runtime(e.to_string()))?;
            println!("wrote baseline to {}", path.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Run(a) => cmd_run(a),
        Command::Evaluate(a) => cmd_evaluate(a),
        Command::Latency(a) => cmd_latency(a),
        Command::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err((code, msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
