use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;

use mreak::descriptor::{
    candidate_pairs, default_pairs, describe, make_orientation_pairs, read_descriptor_dump,
    read_pair_set, train_pairs, write_descriptor_dump, write_pair_set, Branch, PairSet,
    PairTrainingMatrix,
};
use mreak::detector::{detect, DetectorParams};
use mreak::matcher::{cross_check, match_descriptors, matches_tsv, parse_matches_tsv};
use mreak::morphology::{close, open, StructuringElement};
use mreak::pipeline::{
    bench, bench_json, report_json, run_mreak, PairSource, PipelineConfig,
};
use mreak::raster::{draw_matches, load_pnm, save_pnm, Image, IntegralImage};
use mreak::retina::{build_pattern, PatternParams, SamplingPattern, Variant};
use mreak::{Error, Result};

#[derive(Parser)]
#[command(
    name = "mreak",
    version,
    about = "Binary retina keypoint toolkit with morphological opening/closing branches"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum MorphOp {
    Open,
    Close,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum VariantArg {
    Base,
    Open,
    Close,
}

impl VariantArg {
    fn variant(self) -> Variant {
        match self {
            VariantArg::Base => Variant::Base,
            VariantArg::Open => Variant::Opening,
            VariantArg::Close => Variant::Closing,
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Detect corners on a grayscale-converted image; prints one
    /// "x<TAB>y<TAB>response" line per keypoint
    Detect {
        /// Keep at most this many strongest keypoints
        #[arg(long = "max-kp", default_value_t = 2000)]
        max_kp: usize,
        input: PathBuf,
    },
    /// Apply grayscale opening or closing with a flat square kernel
    Morph {
        #[arg(long, value_enum)]
        op: MorphOp,
        /// Kernel side length; must be odd
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Detect and describe keypoints, writing a binary descriptor dump.
    /// For the open/close variants the input is expected to be already
    /// morphed (see `morph`); this stage never morphs by itself.
    Describe {
        #[arg(long, value_enum, default_value_t = VariantArg::Base)]
        variant: VariantArg,
        /// "default" or a path to a trained pair file
        #[arg(long, default_value = "default")]
        pairs: String,
        /// Descriptor length in bits when using the default pairs
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long = "max-kp", default_value_t = 2000)]
        max_kp: usize,
        input: PathBuf,
        output: PathBuf,
    },
    /// Match two descriptor dumps; prints a TSV match list
    Match {
        a: PathBuf,
        b: PathBuf,
        #[arg(long, default_value_t = 0.75)]
        ratio: f32,
        /// Keep only mutual nearest neighbors
        #[arg(long = "cross-check")]
        cross_check: bool,
    },
    /// Run the full two-branch pipeline on an image pair
    Pipeline {
        a: PathBuf,
        b: PathBuf,
        /// Report JSON path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write a side-by-side rendering of the merged matches
        #[arg(long)]
        render: Option<PathBuf>,
        #[arg(long, default_value_t = 0.75)]
        ratio: f32,
        /// Endpoint radius for cross-branch match deduplication, pixels
        #[arg(long, default_value_t = 2.0)]
        dedup: f32,
        #[arg(long, default_value_t = 3)]
        kernel: usize,
        /// Trained pair file; default pairs when omitted
        #[arg(long)]
        pairs: Option<PathBuf>,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long = "max-kp", default_value_t = 2000)]
        max_kp: usize,
    },
    /// Train a descriptor pair set from a directory of PNM images
    TrainPairs {
        #[arg(long)]
        corpus: PathBuf,
        #[arg(long, default_value_t = 512)]
        n: usize,
        #[arg(long = "max-kp", default_value_t = 2000)]
        max_kp: usize,
        output: PathBuf,
    },
    /// Time the baseline, two-branch, and float-control runs over image pairs
    Bench {
        /// Text file listing one "image_a image_b" pair per line
        #[arg(long)]
        pairs: PathBuf,
        /// JSON output path; stdout when omitted
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Draw a match TSV over a side-by-side image pair
    Render {
        a: PathBuf,
        b: PathBuf,
        matches: PathBuf,
        output: PathBuf,
    },
}

fn main() -> ExitCode {
    if let Ok(v) = std::env::var("MREAK_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => {
                eprintln!("mreak: MREAK_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(1);
            }
        }
    }
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.exit_code() == 0 { 0 } else { 1 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    if let Err(msg) = validate(&cli.command) {
        eprintln!("mreak: {msg}");
        return ExitCode::from(1);
    }
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("mreak: {e}");
            ExitCode::from(2)
        }
    }
}

/// Flag-value checks that count as usage errors (exit 1), as opposed to
/// failures while doing the work (exit 2).
fn validate(cmd: &Command) -> std::result::Result<(), String> {
    let check_kernel = |k: usize| {
        if k == 0 || k % 2 == 0 {
            Err(format!("--kernel must be odd and >= 1, got {k}"))
        } else {
            Ok(())
        }
    };
    let check_ratio = |r: f32| {
        if r > 0.0 && r <= 1.0 {
            Ok(())
        } else {
            Err(format!("--ratio must be in (0, 1], got {r}"))
        }
    };
    let check_n = |n: usize| {
        if (1..=903).contains(&n) {
            Ok(())
        } else {
            Err(format!("--n must be in 1..=903, got {n}"))
        }
    };
    let check_max_kp = |m: usize| {
        if m == 0 {
            Err("--max-kp must be >= 1".to_string())
        } else {
            Ok(())
        }
    };
    match cmd {
        Command::Detect { max_kp, .. } => check_max_kp(*max_kp),
        Command::Morph { kernel, .. } => check_kernel(*kernel),
        Command::Describe { n, max_kp, .. } => check_n(*n).and(check_max_kp(*max_kp)),
        Command::Match { ratio, .. } => check_ratio(*ratio),
        Command::Pipeline {
            ratio,
            dedup,
            kernel,
            n,
            max_kp,
            ..
        } => {
            check_ratio(*ratio)?;
            check_kernel(*kernel)?;
            check_n(*n)?;
            check_max_kp(*max_kp)?;
            if *dedup < 0.0 {
                return Err(format!("--dedup must be >= 0, got {dedup}"));
            }
            Ok(())
        }
        Command::TrainPairs { n, max_kp, .. } => check_n(*n).and(check_max_kp(*max_kp)),
        Command::Bench { .. } | Command::Render { .. } => Ok(()),
    }
}

fn load_image(path: &Path) -> Result<Image> {
    load_pnm(&fs::read(path)?)
}

fn load_pair_file(path: &Path) -> Result<PairSet> {
    read_pair_set(&mut fs::read(path)?.as_slice())
}

fn write_text(path: Option<&Path>, text: &str) -> Result<()> {
    match path {
        Some(p) => fs::write(p, text)?,
        None => print!("{text}"),
    }
    Ok(())
}

fn base_pattern() -> Result<SamplingPattern> {
    build_pattern(Variant::Base, &PatternParams::default())
}

fn describe_all(
    gray: &Image,
    pattern: &SamplingPattern,
    pairs: &PairSet,
    max_kp: usize,
) -> Result<Vec<mreak::descriptor::Descriptor>> {
    let opairs = make_orientation_pairs(pattern)?;
    let params = DetectorParams {
        max_keypoints: max_kp,
        ..DetectorParams::default()
    };
    let kps = detect(gray, &params, pattern.margin())?;
    let ii = IntegralImage::from_image(gray)?;
    Ok(kps
        .par_iter()
        .map(|kp| describe(&ii, kp, pattern, pairs, &opairs))
        .collect())
}

fn run(cmd: Command) -> Result<()> {
    match cmd {
        Command::Detect { max_kp, input } => {
            let gray = load_image(&input)?.to_gray();
            let params = DetectorParams {
                max_keypoints: max_kp,
                ..DetectorParams::default()
            };
            let margin = base_pattern()?.margin();
            let mut out = String::new();
            for kp in detect(&gray, &params, margin)? {
                out.push_str(&format!("{:.3}\t{:.3}\t{:.3}\n", kp.x, kp.y, kp.response));
            }
            print!("{out}");
            Ok(())
        }
        Command::Morph {
            op,
            kernel,
            input,
            output,
        } => {
            let img = load_image(&input)?;
            let se = StructuringElement::square(kernel)?;
            let result = match op {
                MorphOp::Open => open(&img, &se),
                MorphOp::Close => close(&img, &se),
            };
            fs::write(&output, save_pnm(&result))?;
            Ok(())
        }
        Command::Describe {
            variant,
            pairs,
            n,
            max_kp,
            input,
            output,
        } => {
            let gray = load_image(&input)?.to_gray();
            let pattern = build_pattern(variant.variant(), &PatternParams::default())?;
            let pair_set = if pairs == "default" {
                default_pairs(&pattern, n)?
            } else {
                load_pair_file(Path::new(&pairs))?
            };
            let descs = describe_all(&gray, &pattern, &pair_set, max_kp)?;
            let mut w = BufWriter::new(fs::File::create(&output)?);
            write_descriptor_dump(
                &mut w,
                &descs,
                pair_set.len(),
                Branch::for_variant(pattern.variant()),
            )
        }
        Command::Match {
            a,
            b,
            ratio,
            cross_check: mutual,
        } => {
            let da = read_descriptor_dump(&mut fs::read(&a)?.as_slice())?;
            let db = read_descriptor_dump(&mut fs::read(&b)?.as_slice())?;
            if da.descriptors.is_empty() || db.descriptors.is_empty() {
                return Ok(());
            }
            let ms = if mutual {
                cross_check(&da.descriptors, &db.descriptors, ratio)?
            } else {
                match_descriptors(&da.descriptors, &db.descriptors, ratio)?
            };
            print!("{}", matches_tsv(ms.matches()));
            Ok(())
        }
        Command::Pipeline {
            a,
            b,
            out,
            render,
            ratio,
            dedup,
            kernel,
            pairs,
            n,
            max_kp,
        } => {
            let img_a = load_image(&a)?;
            let img_b = load_image(&b)?;
            let cfg = PipelineConfig {
                se: StructuringElement::square(kernel)?,
                detector: DetectorParams {
                    max_keypoints: max_kp,
                    ..DetectorParams::default()
                },
                ratio_threshold: ratio,
                dedup_radius: dedup,
                pairs: match pairs {
                    Some(p) => PairSource::Trained(load_pair_file(&p)?),
                    None => PairSource::Default(n),
                },
                ..PipelineConfig::default()
            };
            let report = run_mreak(&img_a, &img_b, &cfg)?;
            write_text(out.as_deref(), &report_json(&report))?;
            if let Some(render_path) = render {
                let merged = report.merged.as_ref().expect("two-branch run fills merged");
                let canvas = draw_matches(&img_a, &img_b, merged.matches());
                fs::write(&render_path, save_pnm(&canvas))?;
            }
            Ok(())
        }
        Command::TrainPairs {
            corpus,
            n,
            max_kp,
            output,
        } => {
            let mut files: Vec<PathBuf> = fs::read_dir(&corpus)?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|p| {
                    p.extension()
                        .and_then(|e| e.to_str())
                        .is_some_and(|e| matches!(e.to_ascii_lowercase().as_str(), "pgm" | "ppm" | "pnm"))
                })
                .collect();
            files.sort();
            if files.is_empty() {
                return Err(Error::Config(format!(
                    "corpus {} contains no .pgm/.ppm/.pnm images",
                    corpus.display()
                )));
            }
            let pattern = base_pattern()?;
            let all_pairs = PairSet::new(candidate_pairs())?;
            let mut matrix = PairTrainingMatrix::new();
            for path in &files {
                let gray = load_image(path)?.to_gray();
                for d in describe_all(&gray, &pattern, &all_pairs, max_kp)? {
                    matrix.push_descriptor(&d)?;
                }
            }
            let trained = train_pairs(&matrix, n)?;
            let mut w = BufWriter::new(fs::File::create(&output)?);
            write_pair_set(&mut w, &trained)?;
            eprintln!(
                "trained {} pairs from {} keypoints across {} images",
                trained.len(),
                matrix.rows(),
                files.len()
            );
            Ok(())
        }
        Command::Bench { pairs, out } => {
            let list = fs::read_to_string(&pairs)?;
            let mut image_pairs = Vec::new();
            for (lineno, line) in list.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let mut parts = line.split_whitespace();
                let (pa, pb) = match (parts.next(), parts.next(), parts.next()) {
                    (Some(pa), Some(pb), None) => (pa, pb),
                    _ => {
                        return Err(Error::FileFormat(format!(
                            "pair list line {}: expected two paths",
                            lineno + 1
                        )))
                    }
                };
                image_pairs.push((load_image(Path::new(pa))?, load_image(Path::new(pb))?));
            }
            let rows = bench(&image_pairs, &PipelineConfig::default())?;
            write_text(out.as_deref(), &bench_json(&rows))
        }
        Command::Render {
            a,
            b,
            matches,
            output,
        } => {
            let img_a = load_image(&a)?;
            let img_b = load_image(&b)?;
            let ms = parse_matches_tsv(&fs::read_to_string(&matches)?)?;
            let canvas = draw_matches(&img_a, &img_b, &ms);
            fs::write(&output, save_pnm(&canvas))?;
            Ok(())
        }
    }
}
