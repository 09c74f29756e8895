//! `gxestat`: command-line front end.
//!
//! Exit status 0 on success, 1 for usage errors, 2 when the data or a
//! model cannot be handled.

use std::fs;
use std::net::{IpAddr, SocketAddr};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};

use gxestat_core::biplot::BiplotMode;
use gxestat_core::data::{
    detect_mapping, parse_csv, ColumnMapping, EnvironmentGrouping, TrialDataset,
};
use gxestat_core::export::{render_svg, SvgStyle};
use gxestat_core::gge::{gge_biplot, Centering};
use gxestat_core::mixed::FitMethod;
use gxestat_core::pipeline::{
    ammi_artifacts, bundle_artifacts, run_all, run_ammi, run_significance, run_stability,
    significance_artifacts, stability_artifacts, Artifact, PipelineOptions,
};

#[derive(Parser, Debug)]
#[command(
    name = "gxestat",
    version,
    about = "Genotype-by-environment analysis of multi-environment trials"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Mixed-model significance tests for one fixed/random case.
    Significance {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        sig: SignificanceArgs,
    },
    /// Single-genotype stability statistics.
    Stability {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        stab: StabilityArgs,
    },
    /// AMMI fit, ANOVA and biplot data.
    Ammi {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        ammi: AmmiArgs,
    },
    /// One GGE biplot.
    Gge {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        gge: GgeArgs,
        /// Biplot to draw.
        #[arg(long, value_enum, default_value_t = Mode::PcScatter)]
        mode: Mode,
        /// Singular-value partition in [0, 1]; each mode has its own default.
        #[arg(long, value_parser = unit_interval)]
        svp: Option<f64>,
    },
    /// Every analysis, all figures and `bundle.json`.
    All {
        #[command(flatten)]
        io: IoArgs,
        #[command(flatten)]
        sig: SignificanceArgs,
        #[command(flatten)]
        stab: StabilityArgs,
        #[command(flatten)]
        ammi: AmmiArgs,
        #[command(flatten)]
        gge: GgeArgs,
    },
    /// Run the HTTP service.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value_t = 8080)]
        port: u16,
        /// Idle seconds before a session is dropped.
        #[arg(long, default_value_t = 3600)]
        session_ttl: u64,
        /// Allowed CORS origin; any origin when omitted.
        #[arg(long)]
        cors_origin: Option<String>,
    },
}

#[derive(Args, Debug)]
struct IoArgs {
    /// Trial data in long CSV form, one row per plot.
    #[arg(long)]
    input: PathBuf,
    /// Output directory; created if needed.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Year column. Optional unless given explicitly.
    #[arg(long)]
    year_col: Option<String>,
    #[arg(long, default_value = "LC")]
    location_col: String,
    /// Replicate column. Optional unless given explicitly.
    #[arg(long)]
    rep_col: Option<String>,
    #[arg(long, default_value = "CLT")]
    genotype_col: String,
    #[arg(long, default_value = "MY")]
    trait_col: String,
    /// Environments of the genotype-by-environment tables.
    #[arg(long, value_enum, default_value_t = Grouping::Location)]
    grouping: Grouping,
}

#[derive(Args, Debug)]
struct SignificanceArgs {
    /// Fixed/random case, 1 to 5.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u8).range(1..=5))]
    case: u8,
    /// Likelihood for the random-term tests.
    #[arg(long, value_enum, default_value_t = Likelihood::Reml)]
    lrt_method: Likelihood,
}

#[derive(Args, Debug)]
struct StabilityArgs {
    /// Replicates behind each two-way cell when scaling the pooled error.
    #[arg(long, default_value_t = 1, value_parser = clap::value_parser!(u64).range(1..))]
    error_reps: u64,
    /// Level of the LSD in Kang's rank-sum.
    #[arg(long, default_value_t = 0.05, value_parser = open_unit)]
    lsd_alpha: f64,
}

#[derive(Args, Debug)]
struct AmmiArgs {
    /// Multiplicative terms to keep; chosen by bootstrap when omitted.
    #[arg(long)]
    components: Option<usize>,
    /// Level of the component-selection bootstrap test.
    #[arg(long, default_value_t = 0.05, value_parser = open_unit)]
    alpha: f64,
    #[arg(long, default_value_t = 1000)]
    n_boot: usize,
    #[arg(long, env = "GXESTAT_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct GgeArgs {
    #[arg(long, value_enum, default_value_t = CenteringArg::Centered)]
    centering: CenteringArg,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Likelihood {
    Reml,
    Ml,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Grouping {
    Location,
    LocationYear,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum CenteringArg {
    Centered,
    Standardized,
}

#[derive(ValueEnum, Clone, Copy, Debug)]
enum Mode {
    PcScatter,
    MeanVsStability,
    RankingGenotypes,
    RankingEnvironments,
    WhichWonWhere,
    DiscrimVsRepr,
    EnvRelationship,
}

impl From<Mode> for BiplotMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::PcScatter => BiplotMode::PcScatter,
            Mode::MeanVsStability => BiplotMode::MeanVsStability,
            Mode::RankingGenotypes => BiplotMode::RankingGenotypes,
            Mode::RankingEnvironments => BiplotMode::RankingEnvironments,
            Mode::WhichWonWhere => BiplotMode::WhichWonWhere,
            Mode::DiscrimVsRepr => BiplotMode::DiscrimVsRepr,
            Mode::EnvRelationship => BiplotMode::EnvRelationship,
        }
    }
}

fn open_unit(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if v > 0.0 && v < 1.0 {
        Ok(v)
    } else {
        Err("must lie strictly between 0 and 1".into())
    }
}

fn unit_interval(s: &str) -> Result<f64, String> {
    let v: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if (0.0..=1.0).contains(&v) {
        Ok(v)
    } else {
        Err("must lie in [0, 1]".into())
    }
}

/// A message and the exit status to report it with.
struct Failure(String, u8);

impl<E: std::fmt::Display> From<E> for Failure {
    fn from(e: E) -> Self {
        Failure(e.to_string(), 2)
    }
}

fn failed(msg: String) -> Failure {
    Failure(msg, 2)
}

fn load(io: &IoArgs) -> Result<TrialDataset, Failure> {
    let bytes = fs::read(&io.input).map_err(|e| failed(format!("{}: {e}", io.input.display())))?;
    let base = ColumnMapping {
        year: Some(io.year_col.clone().unwrap_or_else(|| "YR".into())),
        location: io.location_col.clone(),
        rep: Some(io.rep_col.clone().unwrap_or_else(|| "RP".into())),
        genotype: io.genotype_col.clone(),
        trait_name: io.trait_col.clone(),
    };
    let mut mapping = detect_mapping(&bytes, &base)?;
    // Explicitly named columns must be present.
    if io.year_col.is_some() {
        mapping.year = base.year.clone();
    }
    if io.rep_col.is_some() {
        mapping.rep = base.rep.clone();
    }
    Ok(parse_csv(&bytes, &mapping)?)
}

fn options(
    io: &IoArgs,
    sig: Option<&SignificanceArgs>,
    stab: Option<&StabilityArgs>,
    ammi: Option<&AmmiArgs>,
    gge: Option<&GgeArgs>,
) -> PipelineOptions {
    let grouping = match io.grouping {
        Grouping::Location => EnvironmentGrouping::Location,
        Grouping::LocationYear => EnvironmentGrouping::LocationYear,
    };
    let mut o = PipelineOptions {
        grouping,
        ..PipelineOptions::default()
    };
    o.stability.grouping = grouping;
    if let Some(s) = sig {
        o.case = s.case;
        o.significance.lrt.method = match s.lrt_method {
            Likelihood::Reml => FitMethod::Reml,
            Likelihood::Ml => FitMethod::Ml,
        };
    }
    if let Some(s) = stab {
        o.stability.error_reps = s.error_reps as usize;
        o.stability.lsd_alpha = s.lsd_alpha;
    }
    if let Some(a) = ammi {
        o.components = a.components;
        o.alpha = a.alpha;
        o.n_boot = a.n_boot;
        o.seed = a.seed;
    }
    if let Some(g) = gge {
        o.centering = match g.centering {
            CenteringArg::Centered => Centering::EnvironmentCentered,
            CenteringArg::Standardized => Centering::EnvironmentStandardized,
        };
    }
    o
}

fn json_artifact<T: serde::Serialize>(name: String, value: &T) -> Result<Artifact, Failure> {
    let mut contents = serde_json::to_string_pretty(value)?;
    contents.push('\n');
    Ok(Artifact { name, contents })
}

/// Writes every artifact or none: on any failure the files already
/// written, and the directory if this call created it, are removed.
fn write_all(out: &Path, artifacts: &[Artifact]) -> Result<(), Failure> {
    let created = !out.exists();
    if created {
        fs::create_dir_all(out).map_err(|e| failed(format!("{}: {e}", out.display())))?;
    }
    let mut written = Vec::new();
    for a in artifacts {
        let path = out.join(&a.name);
        if let Err(e) = fs::write(&path, &a.contents) {
            for p in &written {
                let _ = fs::remove_file(p);
            }
            if created {
                let _ = fs::remove_dir_all(out);
            }
            return Err(failed(format!("{}: {e}", path.display())));
        }
        written.push(path);
    }
    Ok(())
}

fn run(command: Command) -> Result<(), Failure> {
    match command {
        Command::Significance { io, sig } => {
            let ds = load(&io)?;
            let opts = options(&io, Some(&sig), None, None, None);
            let table = run_significance(&ds, &opts)?;
            print!("{}", table.to_text());
            if let Some(out) = &io.out {
                let mut files = significance_artifacts(&table, &ds)?;
                files.push(json_artifact(
                    format!("significance_case{}.json", sig.case),
                    &table,
                )?);
                write_all(out, &files)?;
            }
        }
        Command::Stability { io, stab } => {
            let ds = load(&io)?;
            let opts = options(&io, None, Some(&stab), None, None);
            let report = run_stability(&ds, &opts)?;
            print!("{}", report.to_text());
            if let Some(out) = &io.out {
                let mut files = stability_artifacts(&report);
                files.push(json_artifact("stability.json".into(), &report)?);
                write_all(out, &files)?;
            }
        }
        Command::Ammi { io, ammi } => {
            let ds = load(&io)?;
            let opts = options(&io, None, None, Some(&ammi), None);
            let section = run_ammi(&ds, &opts)?;
            print!("{}", section.fit.anova_text());
            if let Some(out) = &io.out {
                let mut files = ammi_artifacts(&section);
                files.push(json_artifact("ammi.json".into(), &section)?);
                write_all(out, &files)?;
            }
        }
        Command::Gge { io, gge, mode, svp } => {
            let ds = load(&io)?;
            let opts = options(&io, None, None, None, Some(&gge));
            let table = gxestat_core::data::two_way_means(&ds, opts.grouping);
            let mode = BiplotMode::from(mode);
            let g =
                gge_biplot(&table, mode, opts.centering, svp).map_err(gxestat_core::Error::from)?;
            for axis in &g.axes {
                println!("PC{} {:.1}%", axis.component + 1, axis.explained_percent);
            }
            if let Some(w) = g.winners() {
                for s in &w.sectors {
                    println!("{}: {}", s.winner, s.environments.join(", "));
                }
            }
            for warning in &g.warnings {
                println!("warning: {warning}");
            }
            if let Some(out) = &io.out {
                let files = vec![
                    Artifact {
                        name: format!("gge_{}.svg", mode.name()),
                        contents: render_svg(&g, &SvgStyle::default()),
                    },
                    json_artifact(format!("gge_{}.json", mode.name()), &g)?,
                ];
                write_all(out, &files)?;
            }
        }
        Command::All {
            io,
            sig,
            stab,
            ammi,
            gge,
        } => {
            let Some(out) = &io.out else {
                return Err(Failure("`all` requires --out <DIR>".into(), 1));
            };
            let ds = load(&io)?;
            let opts = options(&io, Some(&sig), Some(&stab), Some(&ammi), Some(&gge));
            // Everything is computed before the first file is written.
            let bundle = run_all(&ds, &opts)?;
            let files = bundle_artifacts(&bundle, &ds)?;
            for t in &bundle.significance {
                print!("{}", t.to_text());
                println!();
            }
            if let Some(s) = &bundle.stability {
                print!("{}", s.to_text());
            }
            write_all(out, &files)?;
        }
        Command::Serve {
            bind,
            port,
            session_ttl,
            cors_origin,
        } => {
            env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
                .init();
            let config = gxestat_service::ServiceConfig {
                session_ttl: std::time::Duration::from_secs(session_ttl),
                cors_origin,
                ..Default::default()
            };
            let rt = tokio::runtime::Runtime::new()?;
            rt.block_on(gxestat_service::serve(SocketAddr::new(bind, port), config))?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure(msg, code)) => {
            eprintln!("error: {msg}");
            ExitCode::from(code)
        }
    }
}
