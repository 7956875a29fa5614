use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use amt_cli::commands::{
    analyze_stereo, evaluate, learn_dict, load_codebooks, reproduce_maps, synth, synth_notes, transcribe_file,
};
use amt_cli::config::{DeltaSpec, Method, RunConfig};
use amt_cli::synth::{StereoModel, SynthParams};
use amt_cli::{CliError, CliResult};
use amt_core::signal::StftConfig;
use clap::{Args, Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "amt",
    version,
    about = "Polyphonic piano transcription by nonnegative factorization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Learn a note codebook from isolated-note WAV files.
    LearnDict {
        /// Directory of note files.
        notes: PathBuf,
        /// Output codebook CSV.
        #[arg(short, long)]
        out: PathBuf,
        /// `file<TAB>midi` list; otherwise pitches come from the file names.
        #[arg(long)]
        annotations: Option<PathBuf>,
        /// Also write one codebook per channel (`<out>.ch<k>.csv`).
        #[arg(long)]
        per_channel: bool,
        #[command(flatten)]
        stft: StftArgs,
    },
    /// Transcribe a WAV file to MIDI.
    Transcribe {
        audio: PathBuf,
        /// Output MIDI file; `.tsv` and `.json` siblings are written next to it.
        #[arg(short, long)]
        out: PathBuf,
        /// Ground truth (MIDI, MAPS .txt or TSV), required for a delta sweep.
        #[arg(long)]
        truth: Option<PathBuf>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[command(flatten)]
        run: RunArgs,
    },
    /// Score predicted notes against ground truth (two files or two directories).
    Evaluate {
        predicted: PathBuf,
        truth: PathBuf,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        /// Write metrics as JSON, or CSV when the name ends in `.csv`.
        #[arg(short, long)]
        out: Option<PathBuf>,
    },
    /// Inter-channel ratio curves of a stereo recording.
    AnalyzeStereo {
        audio: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Frame indices to analyze.
        #[arg(long, value_delimiter = ',', default_value = "0")]
        frames: Vec<usize>,
        #[command(flatten)]
        stft: StftArgs,
    },
    /// Render a score TSV (`onset<TAB>offset<TAB>midi`) to WAV plus ground truth.
    Synth {
        score: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value = "mono")]
        stereo: StereoModel,
        #[arg(long, default_value_t = 22050)]
        sample_rate: u32,
    },
    /// Render isolated notes for codebook learning.
    SynthNotes {
        #[arg(short, long)]
        out: PathBuf,
        #[arg(long, default_value_t = 21)]
        low: u8,
        #[arg(long, default_value_t = 108)]
        high: u8,
        #[arg(long, default_value_t = 1.0)]
        duration: f64,
        #[arg(long, default_value = "mono")]
        stereo: StereoModel,
        #[arg(long, default_value_t = 22050)]
        sample_rate: u32,
    },
    /// Comparison table over a MAPS-style folder of `.wav`/`.txt` pairs.
    Maps {
        dir: PathBuf,
        #[arg(short, long)]
        out: PathBuf,
        /// Methods to compare.
        #[arg(long, value_delimiter = ',', default_value = "semi-nmf")]
        methods: Vec<Method>,
        #[arg(long, default_value_t = 0.05)]
        tol: f64,
        #[command(flatten)]
        run: RunArgs,
    },
}

#[derive(Args)]
struct StftArgs {
    /// Frame length in milliseconds.
    #[arg(long)]
    frame_ms: Option<f64>,
    /// Hop as a fraction of the frame length.
    #[arg(long)]
    hop: Option<f64>,
}

impl StftArgs {
    fn config(&self) -> StftConfig {
        let mut c = StftConfig::default();
        if let Some(ms) = self.frame_ms {
            c.frame_len_ms = ms;
        }
        if let Some(h) = self.hop {
            c.hop_fraction = h;
        }
        c
    }
}

#[derive(Args)]
struct RunArgs {
    /// `key=value` settings file; flags override it.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    rank: Option<usize>,
    #[arg(long, conflicts_with = "delta_sweep")]
    delta_db: Option<f64>,
    /// `FROM:TO:STEP`; without a value, 10 to 25 dB in 0.5 dB steps.
    #[arg(long, num_args = 0..=1, default_missing_value = "default")]
    delta_sweep: Option<String>,
    /// none, l0:N, l1:ALPHA or l2:BETA.
    #[arg(long)]
    sparsity: Option<String>,
    /// w, h or both.
    #[arg(long)]
    sparsity_target: Option<String>,
    /// fixed or adaptive.
    #[arg(long)]
    threshold: Option<String>,
    /// Codebook CSV; repeat once per channel for per-channel codebooks.
    #[arg(long)]
    codebook: Vec<PathBuf>,
    #[arg(long)]
    frame_ms: Option<f64>,
    #[arg(long)]
    hop: Option<f64>,
    /// Random initialization with this seed instead of NNDSVD.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    truncate_seconds: Option<f64>,
    /// Deterministic inner loops.
    #[arg(long)]
    test_mode: bool,
}

impl RunArgs {
    fn config(&self) -> CliResult<RunConfig> {
        let mut cfg = RunConfig::default();
        if let Some(p) = &self.config {
            cfg.apply_file(p)?;
        }
        let settings = [
            ("method", self.method.clone()),
            ("rank", self.rank.map(|v| v.to_string())),
            ("delta_db", self.delta_db.map(|v| v.to_string())),
            ("delta_sweep", self.delta_sweep.clone()),
            ("sparsity", self.sparsity.clone()),
            ("sparsity_target", self.sparsity_target.clone()),
            ("threshold", self.threshold.clone()),
            ("frame_ms", self.frame_ms.map(|v| v.to_string())),
            ("hop", self.hop.map(|v| v.to_string())),
            ("seed", self.seed.map(|v| v.to_string())),
            ("max_iters", self.max_iters.map(|v| v.to_string())),
            ("truncate_seconds", self.truncate_seconds.map(|v| v.to_string())),
        ];
        for (key, value) in settings {
            if let Some(v) = value {
                cfg.set(key, &v)?;
            }
        }
        if !self.codebook.is_empty() {
            cfg.codebooks = self.codebook.clone();
        }
        cfg.test_mode |= self.test_mode;
        Ok(cfg)
    }
}

fn print_json<T: serde::Serialize>(value: &T) {
    // a closed pipe (`amt ... | head`) is not an error
    let _ = writeln!(
        std::io::stdout().lock(),
        "{}",
        serde_json::to_string_pretty(value).expect("serializable")
    );
}

fn synth_params(sample_rate: u32) -> SynthParams {
    SynthParams {
        sample_rate,
        ..Default::default()
    }
}

fn run(cli: Cli) -> CliResult<()> {
    match cli.command {
        Command::LearnDict {
            notes,
            out,
            annotations,
            per_channel,
            stft,
        } => print_json(&learn_dict(
            &notes,
            annotations.as_deref(),
            &out,
            &stft.config(),
            per_channel,
        )?),
        Command::Transcribe {
            audio,
            out,
            truth,
            tol,
            run,
        } => print_json(&transcribe_file(&audio, &run.config()?, &out, truth.as_deref(), tol)?),
        Command::Evaluate {
            predicted,
            truth,
            tol,
            out,
        } => print_json(&evaluate(&predicted, &truth, tol, out.as_deref())?),
        Command::AnalyzeStereo {
            audio,
            out,
            frames,
            stft,
        } => print_json(&analyze_stereo(&audio, &frames, &stft.config(), &out)?),
        Command::Synth {
            score,
            out,
            stereo,
            sample_rate,
        } => {
            let events = synth(&score, &out, stereo, &synth_params(sample_rate))?;
            println!("rendered {} events to {}", events.len(), out.display());
        }
        Command::SynthNotes {
            out,
            low,
            high,
            duration,
            stereo,
            sample_rate,
        } => {
            if low > high {
                return Err(CliError::Config(format!("empty pitch range {low}..{high}")));
            }
            let midis: Vec<u8> = (low..=high).collect();
            let files = synth_notes(&midis, duration, &out, stereo, &synth_params(sample_rate))?;
            println!("rendered {} notes to {}", files.len(), out.display());
        }
        Command::Maps {
            dir,
            out,
            methods,
            tol,
            run,
        } => {
            let base = run.config()?;
            let truncate = base.truncate_seconds.unwrap_or(30.0);
            let configs: Vec<RunConfig> = methods
                .into_iter()
                .map(|method| RunConfig {
                    method,
                    delta: if base.delta.is_sweep() {
                        base.delta
                    } else {
                        DeltaSpec::DEFAULT_SWEEP
                    },
                    ..base.clone()
                })
                .collect();
            let books = load_codebooks(&base.codebooks)?;
            let rows = reproduce_maps(&dir, &configs, &books, truncate, tol, &out)?;
            print_json(&rows);
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
