use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use lookat::bench::{
    cost_model, run_experiment, run_proposition_sweep, scalar_cost, write_report, ExperimentConfig,
    PropositionOptions,
};
use lookat::pq::{encode_keys, train_codebook_traced, Codebook, PqConfig};
use lookat::scalarquant::BitWidth;
use lookat::tensorio::{generate_synthetic, load_dump, save_dump, AttentionDump, DUMP_MAGIC};
use lookat::{KeyDistribution, Result, SynthSpec};

/// Exit status when any grid cell (or sweep check) fails.
const EXIT_CELL_FAILED: u8 = 2;

#[derive(Parser)]
#[command(
    name = "lookat",
    version,
    about = "Product-quantized KV-cache keys with lookup-table attention"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a codebook on the keys of a dump (or of a synthetic spec JSON).
    Train {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        m: usize,
        #[arg(long = "K", default_value_t = 256)]
        k: usize,
        #[arg(long, default_value_t = 25)]
        iters: usize,
        #[arg(long, default_value_t = 1e-4)]
        tolerance: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Encode the keys of a dump into one-byte codes.
    Encode {
        #[arg(long)]
        input: PathBuf,
        #[arg(long)]
        codebook: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the experiment described by a JSON config.
    Eval {
        #[arg(long)]
        config: PathBuf,
    },
    /// Rank-correlation table over an (m, K) grid on synthetic data.
    SweepProp {
        #[arg(long, default_value_t = 64)]
        dk: usize,
        #[arg(long = "m-list", value_delimiter = ',', num_args = 1.., default_values_t = [2, 4, 8])]
        m_list: Vec<usize>,
        #[arg(long = "k-list", value_delimiter = ',', num_args = 1.., default_values_t = [16, 64, 256])]
        k_list: Vec<usize>,
        #[arg(long, default_value_t = 12)]
        heads: usize,
        #[arg(long = "len", default_value_t = 512)]
        seq_len: usize,
        /// Key clusters; 0 draws isotropic Gaussian keys.
        #[arg(long, default_value_t = 64)]
        clusters: usize,
        #[arg(long, default_value_t = 0.3)]
        spread: f32,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        json: Option<PathBuf>,
    },
    /// Analytic per-query FLOP and bandwidth comparison.
    Cost {
        #[arg(long = "L")]
        seq_len: usize,
        #[arg(long)]
        dk: usize,
        #[arg(long)]
        m: usize,
        #[arg(long = "K", default_value_t = 256)]
        k: usize,
        #[arg(long, default_value_t = 2)]
        bytes_per_dim: usize,
    },
    /// Generate a synthetic dump from a JSON spec.
    Synth {
        #[arg(long)]
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn read_input(path: &Path) -> Result<AttentionDump> {
    let bytes = fs::read(path)?;
    if bytes.starts_with(&DUMP_MAGIC) {
        AttentionDump::from_bytes(&bytes)
    } else {
        let spec: SynthSpec = serde_json::from_slice(&bytes)?;
        generate_synthetic(&spec)
    }
}

fn configure_threads() {
    if let Some(n) = std::env::var("LOOKAT_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
    {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global();
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::Train {
            input,
            m,
            k,
            iters,
            tolerance,
            seed,
            out,
        } => {
            let dump = read_input(&input)?;
            let config = PqConfig {
                num_subspaces: m,
                num_centroids: k,
                kmeans_iters: iters,
                kmeans_seed: seed,
                tolerance,
            };
            let trained = train_codebook_traced(dump.keys.as_slice(), dump.head_dim(), &config)?;
            trained.codebook.save(&out)?;
            for (i, obj) in trained.objective.iter().enumerate() {
                println!(
                    "subspace {i}: {} iterations, objective {:.6} -> {:.6}",
                    obj.len(),
                    obj.first().copied().unwrap_or(0.0),
                    obj.last().copied().unwrap_or(0.0)
                );
            }
            println!("wrote {}", out.display());
        }
        Command::Encode {
            input,
            codebook,
            out,
        } => {
            let dump = load_dump(&input)?;
            let codebook = Codebook::load(&codebook)?;
            let cache = encode_keys(&dump.keys, &codebook)?;
            fs::write(&out, cache.to_bytes(codebook.num_centroids()))?;
            println!(
                "encoded {} keys x {} codes -> {}",
                cache.head_count() * cache.seq_len(),
                cache.num_subspaces(),
                out.display()
            );
        }
        Command::Eval { config } => {
            let config: ExperimentConfig = serde_json::from_slice(&fs::read(&config)?)?;
            let report = run_experiment(&config)?;
            write_report(&report, &config.output_path)?;
            print!("{}", report.to_csv());
            for cell in report.cells.iter().filter(|c| c.error.is_some()) {
                eprintln!(
                    "cell {} / {} failed: {}",
                    cell.input,
                    cell.method,
                    cell.error.as_deref().unwrap_or("")
                );
            }
            for row in report.length_sweep.iter().flatten() {
                for input in &row.failed_inputs {
                    eprintln!("length {} / {} failed on {input}", row.seq_len, row.method);
                }
            }
            if report.has_failures() {
                return Ok(ExitCode::from(EXIT_CELL_FAILED));
            }
        }
        Command::SweepProp {
            dk,
            m_list,
            k_list,
            heads,
            seq_len,
            clusters,
            spread,
            seed,
            json,
        } => {
            let spec = SynthSpec {
                head_count: heads,
                seq_len,
                head_dim: dk,
                distribution: if clusters == 0 {
                    KeyDistribution::IsotropicGaussian
                } else {
                    KeyDistribution::ClusteredGaussian {
                        num_clusters: clusters,
                        spread,
                    }
                },
                seed,
                causal: true,
            };
            let options = PropositionOptions {
                kmeans_seed: seed,
                ..Default::default()
            };
            let table = run_proposition_sweep(&spec, &m_list, &k_list, &options)?;
            println!("m,K,d_k/(mK),mean_rho,rows");
            for c in &table.cells {
                println!(
                    "{},{},{:.6},{:.6},{}",
                    c.m, c.k, c.bound_term, c.mean_rho, c.rows
                );
            }
            println!("pearson_r(1-rho, d_k/(mK)) = {:.4}", table.pearson_r);
            println!("fit: 1-rho ~= {:.5} * d_k/(mK)", table.fit_constant);
            for (m, ok) in &table.monotone_in_k {
                println!("m={m}: rho non-decreasing in K: {ok}");
            }
            if let Some(path) = json {
                fs::write(&path, serde_json::to_string_pretty(&table)? + "\n")?;
            }
            if !table.all_monotone() {
                return Ok(ExitCode::from(EXIT_CELL_FAILED));
            }
        }
        Command::Cost {
            seq_len,
            dk,
            m,
            k,
            bytes_per_dim,
        } => {
            let (standard, lookat) = cost_model(seq_len, dk, m, k, bytes_per_dim)?;
            let int8 = scalar_cost(seq_len, dk, BitWidth::Int8)?;
            let int4 = scalar_cost(seq_len, dk, BitWidth::Int4)?;
            println!("method,flops_per_query,flops_entry_convention,bytes_per_query,bytes_per_key");
            for r in [&standard, &int8, &int4, &lookat] {
                println!(
                    "{},{},{},{},{}",
                    r.method,
                    r.flops_per_query,
                    r.flops_per_query_entry_convention
                        .map_or_else(|| "-".to_owned(), |f| f.to_string()),
                    r.bytes_loaded_per_query,
                    r.bytes_per_key
                );
            }
            println!(
                "bandwidth ratio standard/lookat: {}x",
                standard.bytes_per_key / lookat.bytes_per_key
            );
            for r in [&standard, &int8, &int4, &lookat] {
                println!("# {}: {}", r.method, r.assumptions);
            }
        }
        Command::Synth { spec, out } => {
            let spec: SynthSpec = serde_json::from_slice(&fs::read(&spec)?)?;
            let dump = generate_synthetic(&spec)?;
            save_dump(&dump, &out)?;
            println!(
                "wrote {} ([{}, {}, {}], {})",
                out.display(),
                dump.head_count(),
                dump.seq_len(),
                dump.head_dim(),
                dump.source_tag
            );
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    configure_threads();
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
