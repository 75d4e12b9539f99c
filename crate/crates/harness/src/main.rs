use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, ensure, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use scenecomp::conditions::{generation_request, noise_like};
use scenecomp::config::RunConfig;
use scenecomp::dataset::{generate_dataset, Dataset};
use scenecomp::eval::{evaluate, generate, Protocol};
use scenecomp::train::{self, init_state};
use scenecomp_core::geometry::io::{
    encode_depth_stack, encode_ppm, encode_raw_f32, load_camera_path, load_point_cloud,
};
use scenecomp_core::geometry::{
    project_point_cloud, BBox, CameraIntrinsics, PlacementTrack, RgbdFrame, TokenGrid,
};
use scenecomp_core::rope::{grounded_query_positions, RopeConfig};

/// Exit code when evaluation ran but a threshold failed.
const EXIT_THRESHOLD: u8 = 3;

#[derive(Parser)]
#[command(
    name = "scenecomp",
    version,
    about = "Desk-scale motion-into-scene video composition"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct ConfigArgs {
    /// Run config file; defaults apply when omitted.
    #[arg(long, value_name = "FILE")]
    config: Option<PathBuf>,
    /// Override one config key, e.g. `--set train.steps=500`.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<RunConfig> {
        match &self.config {
            Some(p) => RunConfig::load(p, &self.set),
            None => RunConfig::parse("", &self.set),
        }
    }

    /// The explicit config if given, otherwise `stored` with the overrides.
    fn load_or(&self, stored: &RunConfig) -> Result<RunConfig> {
        match &self.config {
            Some(_) => self.load(),
            None => RunConfig::parse(&stored.to_toml(), &self.set),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Split {
    Train,
    Val,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic clip dataset.
    GenData {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
    },
    /// Train adapters and the motion branch.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_name = "FILE")]
        out: PathBuf,
        /// Continue from a checkpoint instead of a fresh initialization.
        #[arg(long, value_name = "FILE")]
        resume: Option<PathBuf>,
        /// Write every step's log line here.
        #[arg(long, value_name = "FILE")]
        log: Option<PathBuf>,
    },
    /// Generate one clip and write its frames.
    Sample {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        #[arg(long, value_enum, default_value = "val")]
        split: Split,
        #[arg(long, default_value_t = 0)]
        clip: usize,
        /// Drop identity and motion conditions.
        #[arg(long)]
        scene_only: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Score a checkpoint; exits with code 3 if any threshold fails.
    Eval {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_name = "FILE")]
        checkpoint: PathBuf,
        #[arg(long, value_name = "FILE")]
        data: PathBuf,
        /// Protocols to run; all when omitted.
        #[arg(long, value_name = "NAME")]
        protocol: Vec<String>,
        /// Directory for report.txt, report.kv and report.json.
        #[arg(long, value_name = "DIR")]
        out: Option<PathBuf>,
    },
    /// Print the grounded query positions for one box.
    InspectRope {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Token corners `x1,y1,x2,y2` (end exclusive).
        #[arg(long, value_name = "X1,Y1,X2,Y2")]
        bbox: String,
    },
    /// Render a point cloud along a camera path.
    RenderEnv {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// `x y z r g b` per line.
        #[arg(long, value_name = "FILE")]
        points: PathBuf,
        /// Optional `f cx cy W H` header, then 12 pose values per line.
        #[arg(long, value_name = "FILE")]
        camera: PathBuf,
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.command {
        Command::GenData { cfg, out } => {
            let cfg = cfg.load()?;
            let data = generate_dataset(&cfg.world)?;
            data.save(&out)?;
            println!(
                "wrote {} training and {} validation clips to {}",
                data.train.len(),
                data.val.len(),
                out.display()
            );
        }
        Command::Train {
            cfg,
            data,
            out,
            resume,
            log,
        } => {
            let cfg = cfg.load()?;
            let data = load_data(&data)?;
            let mut state = match resume {
                Some(p) => train::load(&p)?.0,
                None => init_state(&cfg)?,
            };
            let mut log_file = log
                .map(|p| {
                    fs::File::create(&p)
                        .with_context(|| format!("cannot create log {}", p.display()))
                })
                .transpose()?;
            let every = cfg.train.log_every.max(1);
            let mut io_err = None;
            train::train(&mut state, &data, &cfg, |l| {
                if let Some(f) = log_file.as_mut() {
                    if let Err(e) = writeln!(f, "{l}") {
                        io_err.get_or_insert(e);
                    }
                }
                if l.step % every == 0 || l.step + 1 == cfg.train.steps {
                    println!("{l}");
                }
            })?;
            if let Some(e) = io_err {
                return Err(e).context("cannot write training log");
            }
            train::save(&state, &cfg, &out)?;
            println!("saved step {} to {}", state.step, out.display());
        }
        Command::Sample {
            cfg,
            checkpoint,
            data,
            split,
            clip,
            scene_only,
            seed,
            out,
        } => {
            let (state, stored) = train::load(&checkpoint)?;
            let cfg = cfg.load_or(&stored)?;
            let data = load_data(&data)?;
            data.check_matches(&cfg.world)?;
            let clips = match split {
                Split::Train => &data.train,
                Split::Val => &data.val,
            };
            let c = clips.get(clip).with_context(|| {
                format!(
                    "clip {clip} out of range; the split has {} clips",
                    clips.len()
                )
            })?;
            let cond = generation_request(c, &[], None, !scene_only).build(&c.spec.grid())?;
            let mut rng = <rand_chacha::ChaCha8Rng as rand::SeedableRng>::seed_from_u64(seed);
            let n = c.spec.image;
            let z1 = noise_like((c.len(), n, n, 4), &mut rng);
            let frames = generate(&state.model, &cond, &z1, cfg.eval.sampling_steps)?;
            write_frames(&out, &frames)?;
            println!("wrote {} frames to {}", frames.len(), out.display());
        }
        Command::Eval {
            cfg,
            checkpoint,
            data,
            protocol,
            out,
        } => {
            let (state, stored) = train::load(&checkpoint)?;
            let cfg = cfg.load_or(&stored)?;
            let data = load_data(&data)?;
            let protocols = if protocol.is_empty() {
                Protocol::ALL.to_vec()
            } else {
                protocol
                    .iter()
                    .map(|p| Protocol::parse(p))
                    .collect::<Result<Vec<_>>>()?
            };
            let untrained = init_state(&cfg)?.model;
            let report = evaluate(&state.model, &untrained, &data, &cfg, &protocols)?;
            print!("{report}");
            if let Some(dir) = out {
                fs::create_dir_all(&dir)
                    .with_context(|| format!("cannot create {}", dir.display()))?;
                write(&dir.join("report.txt"), report.to_string().as_bytes())?;
                write(&dir.join("report.kv"), report.to_key_values().as_bytes())?;
                write(&dir.join("report.json"), report.to_json().as_bytes())?;
            }
            if !report.all_passed() {
                let names: Vec<&str> = report.failures().iter().map(|e| e.name.as_str()).collect();
                eprintln!("threshold failures: {}", names.join(", "));
                return Ok(ExitCode::from(EXIT_THRESHOLD));
            }
        }
        Command::InspectRope { cfg, bbox } => {
            let cfg = cfg.load()?;
            let grid = TokenGrid::from_pixels(cfg.world.image, cfg.world.image, cfg.world.patch)?;
            let b = parse_bbox(&bbox, &grid)?;
            let track = PlacementTrack {
                grid,
                boxes: vec![Some(b)],
            };
            let rope = RopeConfig::new(cfg.model.dim / cfg.model.heads)?;
            let c = cfg.world.canonical;
            let pos = grounded_query_positions(&track, 1, c, c, &rope)?;
            println!("{:>3} {:>3} {:>10} {:>10}", "y", "x", "pos_x", "pos_y");
            for (i, p) in pos.iter().enumerate() {
                println!(
                    "{:>3} {:>3} {:>10} {:>10}",
                    i / grid.width,
                    i % grid.width,
                    p[1],
                    p[2]
                );
            }
        }
        Command::RenderEnv {
            cfg,
            points,
            camera,
            out,
        } => {
            let cfg = cfg.load()?;
            let cloud = load_point_cloud::<f64>(&points)
                .with_context(|| format!("cannot load points {}", points.display()))?;
            let path = load_camera_path::<f64>(&camera)
                .with_context(|| format!("cannot load camera path {}", camera.display()))?;
            let intr = match path.intrinsics {
                Some(i) => i,
                None => {
                    let n = cfg.world.image;
                    let c = n as f64 / 2.0;
                    CameraIntrinsics::new(cfg.world.focal, c, c, n, n)?
                }
            };
            let frames = path
                .poses
                .iter()
                .map(|p| project_point_cloud(&cloud, p, &intr))
                .collect::<Result<Vec<_>, _>>()?;
            write_frames(&out, &frames)?;
            let cov = frames
                .iter()
                .flat_map(|f| f.coverage.iter().map(|c| if *c { 1.0f32 } else { 0.0 }));
            write(
                &out.join("coverage.f32"),
                &encode_raw_f32(intr.width, intr.height, frames.len(), cov),
            )?;
            println!("rendered {} frames to {}", frames.len(), out.display());
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn load_data(path: &Path) -> Result<Dataset> {
    Dataset::load(path).with_context(|| {
        format!(
            "cannot load dataset {}; create one with `scenecomp gen-data`",
            path.display()
        )
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("cannot write {}", path.display()))
}

/// `frame_TTT.ppm` per frame plus a `depth.f32` stack.
fn write_frames<S: scenecomp_core::Scalar>(dir: &Path, frames: &[RgbdFrame<S>]) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    for (t, f) in frames.iter().enumerate() {
        write(&dir.join(format!("frame_{t:03}.ppm")), &encode_ppm(&f.rgb)?)?;
    }
    let depths: Vec<_> = frames.iter().map(|f| f.depth.clone()).collect();
    write(&dir.join("depth.f32"), &encode_depth_stack(&depths)?)
}

fn parse_bbox(text: &str, grid: &TokenGrid) -> Result<BBox<f64>> {
    let v: Vec<usize> = text
        .split(',')
        .map(|s| {
            s.trim()
                .parse::<usize>()
                .with_context(|| format!("bbox field `{s}` is not a token index"))
        })
        .collect::<Result<_>>()?;
    ensure!(
        v.len() == 4,
        "bbox needs four comma-separated values x1,y1,x2,y2, got {}",
        v.len()
    );
    if v[2] > grid.width || v[3] > grid.height {
        bail!(
            "bbox {text} exceeds the {}x{} token grid",
            grid.width,
            grid.height
        );
    }
    Ok(BBox::from_corners(0, v[0], v[1], v[2], v[3], grid)?)
}
