//! Command-line driver: train the reference pipelines, fit input laws,
//! compute pattern PMFs / output CDFs / supports / singular-value histograms,
//! and validate everything against built-in Monte Carlo.
//!
//! Every run writes plot-ready CSV plus a `manifest-<command>.json` with the
//! resolved configuration, input hashes, and seeds.

mod csvio;
mod manifest;

use clap::{Args, Parser, Subcommand};
use csvio::{column_index, load_dataset, parse_f64, read_csv, save_dataset, write_csv};
use manifest::ManifestBuilder;
use nalgebra::DVector;
use relu_lawn::data::{fit_gmm_em, load_idx};
use relu_lawn::distribution::{enumerate_pmf, output_cdf, tail_rates, PatternSet};
use relu_lawn::io::{load_mixture, load_network, save_mixture, save_network};
use relu_lawn::model::{ActivationPattern, NetworkParams};
use relu_lawn::orthant::QuadratureConfig;
use relu_lawn::support::{estimate_support, ThresholdSpec};
use relu_lawn::train::{accuracy, glorot_init, train_mlp, LossKind, TrainConfig};
use relu_lawn::{
    coverage_proportion, ks_statistic, make_moons, mc_empirical, mc_sample,
    singular_value_samples, sv_bin_edges, sv_distribution, tv_distance, CovarianceKind, Error,
    GaussianMixture, PatternPmf, Result, SvSource,
};
use serde_json::json;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "relu-lawn",
    version,
    about = "Distribution of the affine functions a trained ReLU network realizes under Gaussian-mixture inputs"
)]
struct Cli {
    /// Worker threads for quadrature cells (default: all cores; results do
    /// not depend on this). Env fallback: RELU_LAWN_THREADS.
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct QuadArgs {
    /// Quadrature points per randomized shift.
    #[arg(long, default_value_t = 8192)]
    budget: usize,
    /// Independent randomized shifts.
    #[arg(long, default_value_t = 8)]
    shifts: usize,
    /// Base seed for all derived quadrature streams.
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl QuadArgs {
    fn config(&self) -> QuadratureConfig {
        QuadratureConfig {
            sample_budget: self.budget,
            n_shifts: self.shifts,
            seed: self.seed,
            ..QuadratureConfig::default()
        }
    }

    fn json(&self) -> serde_json::Value {
        json!({"budget": self.budget, "shifts": self.shifts, "seed": self.seed})
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the moons dataset, train the reference classifier, and write
    /// the network plus the train/test split.
    TrainMoons {
        #[arg(long, default_value_t = 1000)]
        n: usize,
        #[arg(long, default_value_t = 0.2)]
        noise_std: f64,
        #[arg(long, default_value_t = 5)]
        data_seed: u64,
        #[arg(long, value_delimiter = ',', default_value = "4,4,4")]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 20)]
        epochs: usize,
        #[arg(long, default_value_t = 64)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-2)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        #[arg(long, default_value_t = 7)]
        train_seed: u64,
        #[arg(long, default_value_t = 0.8)]
        train_fraction: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Train the image classifier on user-supplied IDX files.
    TrainMnist {
        #[arg(long)]
        train_images: PathBuf,
        #[arg(long)]
        train_labels: PathBuf,
        #[arg(long)]
        test_images: Option<PathBuf>,
        #[arg(long)]
        test_labels: Option<PathBuf>,
        #[arg(long, value_delimiter = ',', default_value = "16,16,16")]
        widths: Vec<usize>,
        #[arg(long, default_value_t = 10)]
        epochs: usize,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long, default_value_t = 1e-3)]
        learning_rate: f64,
        #[arg(long, default_value_t = 0)]
        init_seed: u64,
        #[arg(long, default_value_t = 7)]
        train_seed: u64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fit a diagonal-covariance Gaussian mixture to a dataset (optionally a
    /// single class) with EM.
    FitGmm {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 3)]
        components: usize,
        /// Restrict to rows with this label.
        #[arg(long)]
        label: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        max_iters: usize,
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Sample mean and covariance of one class as a single Gaussian.
    ClassGaussian {
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        label: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Pattern PMF: exhaustive enumeration or an explicit support file.
    #[command(group = clap::ArgGroup::new("patterns").required(true).args(["exhaustive", "support"]))]
    Pmf {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        /// Enumerate every pattern (refused above the bit cap).
        #[arg(long)]
        exhaustive: bool,
        /// CSV with a pattern_bits column.
        #[arg(long)]
        support: Option<PathBuf>,
        /// Cap on total hidden bits for exhaustive mode.
        #[arg(long, default_value_t = 16)]
        max_bits: usize,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Output CDF over a grid of evaluation points.
    #[command(group = clap::ArgGroup::new("patterns").required(true).args(["exhaustive", "support"]))]
    #[command(group = clap::ArgGroup::new("points").required(true).args(["grid", "grid_file"]))]
    OutputCdf {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        #[arg(long)]
        support: Option<PathBuf>,
        #[arg(long)]
        exhaustive: bool,
        #[arg(long, default_value_t = 16)]
        max_bits: usize,
        /// Scalar grid lo:hi:count (output dimension must be 1).
        #[arg(long)]
        grid: Option<String>,
        /// CSV of evaluation points, one row per point, one column per
        /// output coordinate.
        #[arg(long)]
        grid_file: Option<PathBuf>,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Sample-free support estimation.
    Support {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        /// Probability margin from 0.5 (in (0, 0.5)), or entropy bits with
        /// --tau-kind entropy.
        #[arg(long)]
        tau: f64,
        #[arg(long, default_value = "margin")]
        tau_kind: String,
        /// Max free (branching) neurons per layer.
        #[arg(long, default_value_t = 10)]
        cap: usize,
        /// Hard cap on the total pattern count.
        #[arg(long, default_value_t = 65536)]
        pattern_cap: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Fraction of a test set whose patterns fall inside a support file.
    Coverage {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        support: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Probability-weighted Jacobian singular-value histogram of a pattern
    /// set.
    SvDist {
        #[arg(long)]
        net: PathBuf,
        /// CSV with pattern_bits plus a probability or diag_weight column.
        #[arg(long)]
        patterns: PathBuf,
        #[arg(long, default_value_t = 50)]
        bins: usize,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Exhaustive PMF and CDF versus a Monte Carlo oracle: reports total
    /// variation, worst per-pattern deviation, and the CDF sup-gap.
    McValidate {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        gmm: PathBuf,
        #[arg(long, default_value_t = 1_000_000)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        mc_seed: u64,
        #[arg(long, default_value_t = 16)]
        max_bits: usize,
        /// Grid size for the scalar CDF comparison.
        #[arg(long, default_value_t = 20)]
        grid: usize,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
    /// Class-conditional error rates of a binary head at a threshold.
    TailRates {
        #[arg(long)]
        net: PathBuf,
        #[arg(long)]
        gmm0: PathBuf,
        #[arg(long)]
        gmm1: PathBuf,
        #[arg(long)]
        support0: Option<PathBuf>,
        #[arg(long)]
        support1: Option<PathBuf>,
        #[arg(long, default_value_t = 16)]
        max_bits: usize,
        #[arg(long, default_value_t = 0.0)]
        threshold: f64,
        #[command(flatten)]
        quad: QuadArgs,
        #[arg(long, default_value = ".")]
        out_dir: PathBuf,
    },
}

fn main() {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // Help and version are successful exits; anything else is usage.
            let code = match e.kind() {
                clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            std::process::exit(code);
        }
    };

    let threads = cli
        .threads
        .or_else(|| {
            std::env::var("RELU_LAWN_THREADS")
                .ok()
                .and_then(|v| v.parse().ok())
        })
        .unwrap_or(0);
    if threads > 0 {
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }

    match run(cli.command) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(exit_code(&e));
        }
    }
}

/// 2 for data/parse problems, 3 for numeric/capacity problems.
fn exit_code(e: &Error) -> i32 {
    match e {
        Error::Domain(_) | Error::Capacity(_) | Error::Diverged { .. } => 3,
        _ => 2,
    }
}

fn ensure_dir(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    Ok(())
}

/// Support files carry the flat bit string per pattern.
fn load_patterns(path: &Path, net: &NetworkParams) -> Result<Vec<ActivationPattern>> {
    let (header, rows) = read_csv(path)?;
    let bits_col = column_index(&header, "pattern_bits", path)?;
    let widths = net.hidden_widths();
    rows.iter()
        .map(|row| ActivationPattern::parse_bit_string(row[bits_col].trim(), &widths))
        .collect()
}

fn pattern_set(
    exhaustive: bool,
    support: &Option<PathBuf>,
    max_bits: usize,
    net: &NetworkParams,
) -> Result<PatternSet> {
    match (exhaustive, support) {
        (true, _) => Ok(PatternSet::Exhaustive { max_bits }),
        (false, Some(path)) => Ok(PatternSet::Explicit(load_patterns(path, net)?)),
        (false, None) => Err(Error::Domain(
            "choose --exhaustive or provide --support".into(),
        )),
    }
}

fn resolve_support(
    exhaustive: bool,
    support: &Option<PathBuf>,
    max_bits: usize,
    net: &NetworkParams,
) -> Result<Vec<ActivationPattern>> {
    match pattern_set(exhaustive, support, max_bits, net)? {
        PatternSet::Explicit(list) => Ok(list),
        PatternSet::Exhaustive { max_bits } => {
            if net.total_hidden() > max_bits {
                return Err(Error::Capacity(format!(
                    "exhaustive support over {} bits exceeds the {max_bits}-bit cap",
                    net.total_hidden()
                )));
            }
            Ok(ActivationPattern::enumerate_all(&net.hidden_widths()).collect())
        }
    }
}

fn pmf_rows(pmf: &PatternPmf) -> Vec<Vec<String>> {
    pmf.entries
        .iter()
        .map(|(pattern, r)| {
            vec![
                pattern.bit_string(),
                pattern
                    .decimal_label()
                    .map_or_else(String::new, |d| d.to_string()),
                r.value.to_string(),
                r.std_error.to_string(),
            ]
        })
        .collect()
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::TrainMoons {
            n,
            noise_std,
            data_seed,
            widths,
            epochs,
            batch_size,
            learning_rate,
            init_seed,
            train_seed,
            train_fraction,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "train-moons",
                json!({
                    "n": n, "noise_std": noise_std, "data_seed": data_seed,
                    "widths": widths, "epochs": epochs, "batch_size": batch_size,
                    "learning_rate": learning_rate, "init_seed": init_seed,
                    "train_seed": train_seed, "train_fraction": train_fraction,
                    "loss": "binary_cross_entropy_logit", "init": "glorot_uniform",
                }),
            );
            let data = make_moons(n, noise_std, data_seed)?;
            let (train, test) = data.split(train_fraction, data_seed);
            let mut dims = vec![2usize];
            dims.extend(&widths);
            dims.push(1);
            let init = glorot_init(&dims, relu_lawn::Activation::Relu, init_seed)?;
            let cfg = TrainConfig::new(
                learning_rate,
                batch_size,
                epochs,
                train_seed,
                LossKind::BinaryCrossEntropyLogit,
            );
            let net = train_mlp(init, &train, &cfg)?;
            mb.note("train_accuracy", json!(accuracy(&net, &train)?));
            mb.note("test_accuracy", json!(accuracy(&net, &test)?));

            let net_path = out_dir.join("moons-net.json");
            save_network(&net, &net_path)?;
            mb.record_output(&net_path);
            let train_path = out_dir.join("moons-train.csv");
            save_dataset(&train, &train_path)?;
            mb.record_output(&train_path);
            let test_path = out_dir.join("moons-test.csv");
            save_dataset(&test, &test_path)?;
            mb.record_output(&test_path);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::TrainMnist {
            train_images,
            train_labels,
            test_images,
            test_labels,
            widths,
            epochs,
            batch_size,
            learning_rate,
            init_seed,
            train_seed,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "train-mnist",
                json!({
                    "widths": widths, "epochs": epochs, "batch_size": batch_size,
                    "learning_rate": learning_rate, "init_seed": init_seed,
                    "train_seed": train_seed, "loss": "softmax_cross_entropy",
                    "init": "glorot_uniform",
                }),
            );
            mb.hash_input(&train_images)?;
            mb.hash_input(&train_labels)?;
            let train = load_idx(&train_images, &train_labels)?;
            let n_classes = train.n_classes();
            let mut dims = vec![train.dim()];
            dims.extend(&widths);
            dims.push(n_classes);
            let init = glorot_init(&dims, relu_lawn::Activation::Relu, init_seed)?;
            let cfg = TrainConfig::new(
                learning_rate,
                batch_size,
                epochs,
                train_seed,
                LossKind::SoftmaxCrossEntropy,
            );
            let net = train_mlp(init, &train, &cfg)?;
            mb.note("train_accuracy", json!(accuracy(&net, &train)?));
            if let (Some(ti), Some(tl)) = (test_images, test_labels) {
                mb.hash_input(&ti)?;
                mb.hash_input(&tl)?;
                let test = load_idx(&ti, &tl)?;
                mb.note("test_accuracy", json!(accuracy(&net, &test)?));
            }
            let net_path = out_dir.join("mnist-net.json");
            save_network(&net, &net_path)?;
            mb.record_output(&net_path);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::FitGmm {
            data,
            components,
            label,
            seed,
            max_iters,
            tol,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "fit-gmm",
                json!({
                    "data": data.display().to_string(), "components": components,
                    "label": label, "seed": seed, "max_iters": max_iters, "tol": tol,
                    "covariance_kind": "diagonal",
                }),
            );
            mb.hash_input(&data)?;
            let loaded = load_dataset(&data)?;
            let subset = match label {
                Some(l) => loaded.class_subset(l),
                None => loaded,
            };
            let fit = fit_gmm_em(
                &subset.inputs,
                components,
                CovarianceKind::Diagonal,
                seed,
                max_iters,
                tol,
            )?;
            mb.note("iterations", json!(fit.iterations));
            mb.note("converged", json!(fit.converged));
            mb.note(
                "final_log_likelihood",
                json!(fit.log_likelihood.last().copied()),
            );
            let out = out_dir.join(match label {
                Some(l) => format!("gmm-class{l}.json"),
                None => "gmm.json".into(),
            });
            save_mixture(&fit.mixture, &out)?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::ClassGaussian {
            data,
            label,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "class-gaussian",
                json!({"data": data.display().to_string(), "label": label}),
            );
            mb.hash_input(&data)?;
            let loaded = load_dataset(&data)?;
            let subset = loaded.class_subset(label);
            let (mean, cov) = relu_lawn::fit_class_gaussian(&subset.inputs)?;
            let gmm = GaussianMixture::single(mean, cov)?;
            mb.note("n_samples", json!(subset.len()));
            let out = out_dir.join(format!("gaussian-class{label}.json"));
            save_mixture(&gmm, &out)?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::Pmf {
            net,
            gmm,
            exhaustive,
            support,
            max_bits,
            quad,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "pmf",
                json!({
                    "net": net.display().to_string(), "gmm": gmm.display().to_string(),
                    "exhaustive": exhaustive, "support": support.as_ref().map(|p| p.display().to_string()),
                    "max_bits": max_bits, "quadrature": quad.json(),
                }),
            );
            mb.hash_input(&net)?;
            mb.hash_input(&gmm)?;
            if let Some(s) = &support {
                mb.hash_input(s)?;
            }
            let network = load_network(&net)?;
            let mixture = load_mixture(&gmm)?;
            let set = pattern_set(exhaustive, &support, max_bits, &network)?;
            let pmf = enumerate_pmf(&network, &mixture, &set, &quad.config())?;
            mb.note("residual_mass", json!(pmf.residual_mass));
            mb.note("mode", json!(format!("{:?}", pmf.mode)));
            let out = out_dir.join("pmf.csv");
            write_csv(
                &out,
                &["pattern_bits", "pattern_decimal", "probability", "std_error"],
                pmf_rows(&pmf),
            )?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::OutputCdf {
            net,
            gmm,
            support,
            exhaustive,
            max_bits,
            grid,
            grid_file,
            quad,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "output-cdf",
                json!({
                    "net": net.display().to_string(), "gmm": gmm.display().to_string(),
                    "support": support.as_ref().map(|p| p.display().to_string()),
                    "exhaustive": exhaustive, "max_bits": max_bits,
                    "grid": grid, "grid_file": grid_file.as_ref().map(|p| p.display().to_string()),
                    "quadrature": quad.json(),
                }),
            );
            mb.hash_input(&net)?;
            mb.hash_input(&gmm)?;
            if let Some(s) = &support {
                mb.hash_input(s)?;
            }
            let network = load_network(&net)?;
            let mixture = load_mixture(&gmm)?;
            let patterns = resolve_support(exhaustive, &support, max_bits, &network)?;
            let n_out = network.output_dim();

            let points: Vec<DVector<f64>> = match (&grid, &grid_file) {
                (Some(spec), None) => {
                    if n_out != 1 {
                        return Err(Error::Domain(format!(
                            "--grid needs a scalar output head, this network has {n_out}"
                        )));
                    }
                    let parts: Vec<&str> = spec.split(':').collect();
                    if parts.len() != 3 {
                        return Err(Error::Domain(format!(
                            "--grid must be lo:hi:count, got '{spec}'"
                        )));
                    }
                    let lo: f64 = parts[0].parse().map_err(|_| {
                        Error::Domain(format!("bad grid bound '{}'", parts[0]))
                    })?;
                    let hi: f64 = parts[1].parse().map_err(|_| {
                        Error::Domain(format!("bad grid bound '{}'", parts[1]))
                    })?;
                    let count: usize = parts[2].parse().map_err(|_| {
                        Error::Domain(format!("bad grid count '{}'", parts[2]))
                    })?;
                    if count < 2 || hi <= lo {
                        return Err(Error::Domain("grid needs hi > lo and count >= 2".into()));
                    }
                    (0..count)
                        .map(|i| {
                            DVector::from_column_slice(&[lo
                                + (hi - lo) * i as f64 / (count - 1) as f64])
                        })
                        .collect()
                }
                (None, Some(path)) => {
                    mb.hash_input(path)?;
                    let (header, rows) = read_csv(path)?;
                    if header.len() != n_out {
                        return Err(Error::Shape {
                            context: "grid file columns".into(),
                            expected: n_out,
                            got: header.len(),
                        });
                    }
                    rows.iter()
                        .enumerate()
                        .map(|(r, row)| {
                            let vals = row
                                .iter()
                                .map(|f| parse_f64(f, path, r))
                                .collect::<Result<Vec<f64>>>()?;
                            Ok(DVector::from_vec(vals))
                        })
                        .collect::<Result<_>>()?
                }
                _ => {
                    return Err(Error::Domain(
                        "provide exactly one of --grid or --grid-file".into(),
                    ))
                }
            };

            let cfg = quad.config();
            let names: Vec<String> = (0..n_out).map(|i| format!("phi_{i}")).collect();
            let mut header: Vec<&str> = names.iter().map(String::as_str).collect();
            header.push("cdf_value");
            header.push("std_error");
            let mut rows = Vec::with_capacity(points.len());
            for point in &points {
                let r = output_cdf(&network, &mixture, &patterns, point, &cfg)?;
                let mut row: Vec<String> = point.iter().map(f64::to_string).collect();
                row.push(r.value.to_string());
                row.push(r.std_error.to_string());
                rows.push(row);
            }
            let out = out_dir.join("cdf.csv");
            write_csv(&out, &header, rows)?;
            mb.note("support_size", json!(patterns.len()));
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::Support {
            net,
            gmm,
            tau,
            tau_kind,
            cap,
            pattern_cap,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "support",
                json!({
                    "net": net.display().to_string(), "gmm": gmm.display().to_string(),
                    "tau": tau, "tau_kind": tau_kind, "branch_cap": cap,
                    "pattern_cap": pattern_cap,
                }),
            );
            mb.hash_input(&net)?;
            mb.hash_input(&gmm)?;
            let network = load_network(&net)?;
            let mixture = load_mixture(&gmm)?;
            let threshold = match tau_kind.as_str() {
                "margin" => relu_lawn::LayerThreshold::ProbabilityMargin(tau),
                "entropy" => relu_lawn::LayerThreshold::EntropyBits(tau),
                other => {
                    return Err(Error::Domain(format!(
                        "--tau-kind must be margin or entropy, got '{other}'"
                    )))
                }
            };
            let spec = ThresholdSpec::uniform(threshold, network.depth() - 1)
                .with_branch_cap(cap)
                .with_pattern_cap(pattern_cap);
            let est = estimate_support(&network, &mixture, &spec)?;
            mb.note("n_patterns", json!(est.len()));
            mb.note("free_counts", json!(est.free_counts));
            mb.note("thresholds_bits", json!(est.thresholds_bits));
            mb.note("diag_mass", json!(est.diag_weights.iter().sum::<f64>()));
            let out = out_dir.join("support.csv");
            write_csv(
                &out,
                &["pattern_bits", "pattern_decimal", "diag_weight"],
                est.patterns.iter().zip(&est.diag_weights).map(|(p, w)| {
                    vec![
                        p.bit_string(),
                        p.decimal_label().map_or_else(String::new, |d| d.to_string()),
                        w.to_string(),
                    ]
                }),
            )?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::Coverage {
            net,
            support,
            data,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "coverage",
                json!({
                    "net": net.display().to_string(),
                    "support": support.display().to_string(),
                    "data": data.display().to_string(),
                }),
            );
            mb.hash_input(&net)?;
            mb.hash_input(&support)?;
            mb.hash_input(&data)?;
            let network = load_network(&net)?;
            let patterns = load_patterns(&support, &network)?;
            let dataset = load_dataset(&data)?;
            let est = relu_lawn::SupportEstimate {
                diag_weights: vec![0.0; patterns.len()],
                free_counts: vec![],
                thresholds_bits: vec![],
                patterns,
            };
            let fraction = coverage_proportion(&est, &network, &dataset.inputs)?;
            let out = out_dir.join("coverage.csv");
            write_csv(
                &out,
                &["n_inputs", "n_patterns", "coverage"],
                [vec![
                    dataset.len().to_string(),
                    est.patterns.len().to_string(),
                    fraction.to_string(),
                ]],
            )?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::SvDist {
            net,
            patterns,
            bins,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "sv-dist",
                json!({
                    "net": net.display().to_string(),
                    "patterns": patterns.display().to_string(),
                    "bins": bins,
                }),
            );
            mb.hash_input(&net)?;
            mb.hash_input(&patterns)?;
            let network = load_network(&net)?;
            let (header, rows) = read_csv(&patterns)?;
            let bits_col = column_index(&header, "pattern_bits", &patterns)?;
            let weight_col = header
                .iter()
                .position(|h| h == "probability" || h == "diag_weight")
                .ok_or_else(|| Error::Parse {
                    offset: 0,
                    message: format!(
                        "{}: need a probability or diag_weight column",
                        patterns.display()
                    ),
                })?;
            let widths = network.hidden_widths();
            let mut list = Vec::with_capacity(rows.len());
            let mut weights = Vec::with_capacity(rows.len());
            for (r, row) in rows.iter().enumerate() {
                list.push(ActivationPattern::parse_bit_string(
                    row[bits_col].trim(),
                    &widths,
                )?);
                weights.push(parse_f64(&row[weight_col], &patterns, r)?);
            }
            let samples = singular_value_samples(&network, &list, &weights)?;
            let max_sv = samples.iter().map(|&(v, _)| v).fold(0.0, f64::max);
            let edges = sv_bin_edges(max_sv, bins);
            let hist = sv_distribution(&network, &list, &weights, &edges, SvSource::ExactSupport)?;
            mb.note("residual_mass", json!(hist.residual));
            mb.note("max_singular_value", json!(max_sv));
            let out = out_dir.join("sv-hist.csv");
            write_csv(
                &out,
                &["bin_lo", "bin_hi", "mass"],
                hist.edges.windows(2).zip(&hist.masses).map(|(e, m)| {
                    vec![e[0].to_string(), e[1].to_string(), m.to_string()]
                }),
            )?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::McValidate {
            net,
            gmm,
            samples,
            mc_seed,
            max_bits,
            grid,
            quad,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "mc-validate",
                json!({
                    "net": net.display().to_string(), "gmm": gmm.display().to_string(),
                    "samples": samples, "mc_seed": mc_seed, "max_bits": max_bits,
                    "grid": grid, "quadrature": quad.json(),
                }),
            );
            mb.hash_input(&net)?;
            mb.hash_input(&gmm)?;
            let network = load_network(&net)?;
            let mixture = load_mixture(&gmm)?;
            let cfg = quad.config();
            let pmf = enumerate_pmf(
                &network,
                &mixture,
                &PatternSet::Exhaustive { max_bits },
                &cfg,
            )?;
            let draws = mc_sample(&mixture, samples, mc_seed)?;
            let law = mc_empirical(&network, &draws, mc_seed)?;

            let tv = tv_distance(&pmf, &law.to_pmf());
            let max_dev = pmf
                .entries
                .iter()
                .map(|(p, r)| (r.value - law.pattern_frequency(p)).abs())
                .fold(0.0, f64::max);

            let mut rows = vec![
                vec!["tv_distance".into(), tv.to_string()],
                vec!["max_abs_dp".into(), max_dev.to_string()],
                vec!["residual_mass".into(), pmf.residual_mass.to_string()],
                vec![
                    "combined_std_error".into(),
                    pmf.combined_std_error().to_string(),
                ],
            ];
            if network.output_dim() == 1 {
                let support: Vec<ActivationPattern> = pmf
                    .entries
                    .iter()
                    .filter(|(_, r)| r.value > 1e-6)
                    .map(|(p, _)| p.clone())
                    .collect();
                let lo = law.outputs.min();
                let hi = law.outputs.max();
                let curve: Vec<(f64, f64)> = (0..grid)
                    .map(|i| {
                        let v = lo + (hi - lo) * i as f64 / (grid - 1).max(1) as f64;
                        let r = output_cdf(
                            &network,
                            &mixture,
                            &support,
                            &DVector::from_column_slice(&[v]),
                            &cfg,
                        )?;
                        Ok((v, r.value))
                    })
                    .collect::<Result<_>>()?;
                rows.push(vec![
                    "cdf_sup_gap".into(),
                    ks_statistic(&curve, &law).to_string(),
                ]);
            }
            let out = out_dir.join("mc-validate.csv");
            write_csv(&out, &["metric", "value"], rows)?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }

        Command::TailRates {
            net,
            gmm0,
            gmm1,
            support0,
            support1,
            max_bits,
            threshold,
            quad,
            out_dir,
        } => {
            ensure_dir(&out_dir)?;
            let mut mb = ManifestBuilder::new(
                "tail-rates",
                json!({
                    "net": net.display().to_string(),
                    "gmm0": gmm0.display().to_string(), "gmm1": gmm1.display().to_string(),
                    "support0": support0.as_ref().map(|p| p.display().to_string()),
                    "support1": support1.as_ref().map(|p| p.display().to_string()),
                    "max_bits": max_bits, "threshold": threshold,
                    "quadrature": quad.json(),
                }),
            );
            mb.hash_input(&net)?;
            mb.hash_input(&gmm0)?;
            mb.hash_input(&gmm1)?;
            let network = load_network(&net)?;
            let m0 = load_mixture(&gmm0)?;
            let m1 = load_mixture(&gmm1)?;
            let s0 = resolve_support(support0.is_none(), &support0, max_bits, &network)?;
            let s1 = resolve_support(support1.is_none(), &support1, max_bits, &network)?;
            if let Some(p) = &support0 {
                mb.hash_input(p)?;
            }
            if let Some(p) = &support1 {
                mb.hash_input(p)?;
            }
            let rates = tail_rates(
                &network,
                &[(m0, s0), (m1, s1)],
                threshold,
                &quad.config(),
            )?;
            let out = out_dir.join("tail-rates.csv");
            write_csv(
                &out,
                &["class", "error_rate", "std_error"],
                rates.iter().enumerate().map(|(c, r)| {
                    vec![c.to_string(), r.value.to_string(), r.std_error.to_string()]
                }),
            )?;
            mb.record_output(&out);
            mb.write(&out_dir)?;
            Ok(())
        }
    }
}
