mod config;

use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use whofdm::channel::{ber_csv, run_ber, LinkConfig};
use whofdm::design::{block_params_to_kv, optimize, split_block_params, Parameterization};
use whofdm::transmux::ambiguity_grid;
use whofdm::weyl_heisenberg::{extract_blocks, orthonormality_defect, tight_frame_defect};
use whofdm::{paraunitarity_defect, Error, Waveform};

use config::{DesignConfig, SimulateConfig};

#[derive(Parser)]
#[command(name = "whofdm", version, about = "Orthonormal Weyl-Heisenberg OFDM waveforms")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Optimize a waveform and write it to a file.
    Design {
        config: PathBuf,
        /// Overrides the config's output path.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the optimal block parameters (block designs only).
        #[arg(long)]
        params_out: Option<PathBuf>,
    },
    /// Verify orthonormality of a waveform file.
    Check {
        wfm: PathBuf,
        #[arg(long, default_value_t = 1e-9)]
        tol: f64,
        #[arg(long, default_value_t = 4)]
        trials: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample the crossambiguity function of two waveforms.
    Ambiguity {
        v: PathBuf,
        w: PathBuf,
        #[arg(long, allow_hyphen_values = true)]
        xmin: i64,
        #[arg(long, allow_hyphen_values = true)]
        xmax: i64,
        /// Comma-separated frequency shifts in subcarrier spacings.
        #[arg(long, default_value = "", allow_hyphen_values = true)]
        ys: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Measure bit error rates.
    Simulate {
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        workers: Option<usize>,
    },
}

enum Failure {
    Input(String),
    Verification(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Input(e.to_string())
    }
}

type Outcome = std::result::Result<(), Failure>;

fn write_file(path: &Path, contents: &str) -> Outcome {
    std::fs::write(path, contents).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn read_waveform(path: &Path) -> std::result::Result<Waveform, Failure> {
    Waveform::read(path).map_err(|e| Failure::Input(format!("{}: {e}", path.display())))
}

fn cmd_design(config: &Path, out: Option<PathBuf>, params_out: Option<PathBuf>) -> Outcome {
    let cfg = DesignConfig::load(config).map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
    let grid = cfg.grid()?;
    let out = out
        .or_else(|| cfg.output.as_ref().map(|p| config.parent().unwrap_or(Path::new(".")).join(p)))
        .ok_or_else(|| Failure::Input("no output path: pass --out or set output".into()))?;
    let report = optimize(&grid, cfg.parameterization(), &cfg.init(), &cfg.objective(&grid), &cfg.options())?;
    write_file(&out, &report.waveform.to_text())?;
    if let Some(p) = params_out {
        match cfg.parameterization() {
            Parameterization::Blocks { degree } => {
                let blocks = split_block_params(&grid, degree, &report.params)?;
                write_file(&p, &block_params_to_kv(&blocks))?;
            }
            Parameterization::ShortWindow => {
                return Err(Failure::Input("block parameters exist only for block designs".into()));
            }
        }
    }
    print!("{}", report.summary());
    println!("written {}", out.display());
    let defect = orthonormality_defect(&report.waveform);
    if defect.max(report.defect) < 1e-9 {
        Ok(())
    } else {
        Err(Failure::Verification(format!("orthonormality defect {defect:.3e}")))
    }
}

fn cmd_check(wfm: &Path, tol: f64, trials: usize, seed: u64) -> Outcome {
    let v = read_waveform(wfm)?;
    if trials < 2 {
        return Err(Failure::Input("need at least 2 trials".into()));
    }
    let g = *v.grid();
    let ortho = orthonormality_defect(&v);
    let tight = tight_frame_defect(&v, trials, seed);
    println!("N={} K={} taps={} nonzero={}", g.n, g.k, v.len(), v.nonzero_taps());
    println!("orthonormality_defect {ortho:.3e}");
    println!("tight_frame_defect {tight:.3e}");
    let mut worst = ortho.max(tight);
    for (r, b) in extract_blocks(&v).iter().enumerate() {
        let d = paraunitarity_defect(b, 1.0 / g.n as f64);
        println!("block {r} paraunitarity_defect {d:.3e}");
        worst = worst.max(d);
    }
    if worst < tol {
        println!("pass (tol {tol:e})");
        Ok(())
    } else {
        Err(Failure::Verification(format!("defect {worst:.3e} exceeds tol {tol:e}")))
    }
}

fn parse_list(s: &str) -> std::result::Result<Vec<f64>, Failure> {
    s.split(',')
        .map(str::trim)
        .filter(|t| !t.is_empty())
        .map(|t| t.parse().map_err(|_| Failure::Input(format!("bad number {t:?}"))))
        .collect()
}

fn cmd_ambiguity(v: &Path, w: &Path, xmin: i64, xmax: i64, ys: &str, out: &Path) -> Outcome {
    let v = read_waveform(v)?;
    let w = read_waveform(w)?;
    if v.grid() != w.grid() {
        return Err(Failure::Input("waveforms use different lattices".into()));
    }
    if xmin > xmax {
        return Err(Failure::Input("xmin exceeds xmax".into()));
    }
    let ys = parse_list(ys)?;
    let grid = ambiguity_grid(&v, &w, xmin, xmax, &ys);
    write_file(out, &grid.to_csv())?;
    let peak = grid.values.iter().map(|c| c.norm()).fold(0.0, f64::max);
    println!("{} points, peak |A| {peak:.6e}", grid.values.len());
    Ok(())
}

fn cmd_simulate(config: &Path, out: &Path, workers: Option<usize>) -> Outcome {
    let cfg = SimulateConfig::load(config).map_err(|e| Failure::Input(format!("{}: {e}", config.display())))?;
    let base = config.parent().unwrap_or(Path::new("."));
    let schemes = cfg.schemes(base)?;
    let channel = cfg.channel()?;
    let mut csv = String::from("scheme,eps_f,eps_t,");
    let mut table = String::from("scheme      eps_f  eps_t     x_db          ber   95% interval\n");
    let mut first = true;
    for s in &schemes {
        for &ef in &cfg.eps_f {
            for &et in &cfg.eps_t {
                let mut link = LinkConfig::new(s.tx.clone(), s.rx.clone(), channel.clone());
                link.ebn0_db = cfg.ebn0_db;
                link.noiseless = cfg.noiseless;
                link.eps_f = ef;
                link.eps_t = et;
                link.normalize_r0 = cfg.normalize_r0;
                link.interferer = cfg.interferer;
                link.cpe_correction = cfg.cpe_correction;
                link.frames_per_trial = cfg.frames_per_trial;
                link.trials = cfg.trials;
                link.master_seed = cfg.master_seed;
                link.workers = workers;
                let points = run_ber(&link, &cfg.sweep)?;
                let body = ber_csv(&points);
                for (i, line) in body.lines().enumerate() {
                    if i == 0 {
                        if first {
                            csv.push_str(line);
                            csv.push('\n');
                            first = false;
                        }
                        continue;
                    }
                    writeln!(csv, "{},{ef},{et},{line}", s.name).unwrap();
                }
                for p in &points {
                    let (lo, hi) = p.ci95();
                    writeln!(
                        table,
                        "{:<10} {:>6} {:>6} {:>8} {:>12.4e}   [{lo:.2e}, {hi:.2e}]",
                        s.name, ef, et, p.x_db, p.ber
                    )
                    .unwrap();
                }
            }
        }
    }
    if first {
        csv.push_str("x_db,ber,bits,errors\n");
    }
    write_file(out, &csv)?;
    print!("{table}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let usage = e.use_stderr();
            let _ = e.print();
            return if usage { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let outcome = match cli.command {
        Command::Design { config, out, params_out } => cmd_design(&config, out, params_out),
        Command::Check { wfm, tol, trials, seed } => cmd_check(&wfm, tol, trials, seed),
        Command::Ambiguity { v, w, xmin, xmax, ys, out } => cmd_ambiguity(&v, &w, xmin, xmax, &ys, &out),
        Command::Simulate { config, out, workers } => cmd_simulate(&config, &out, workers),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Input(m)) => {
            eprintln!("error: {m}");
            ExitCode::from(1)
        }
        Err(Failure::Verification(m)) => {
            eprintln!("verification failed: {m}");
            ExitCode::from(2)
        }
    }
}
