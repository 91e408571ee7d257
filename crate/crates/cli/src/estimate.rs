//! `dockport estimate`: per-frame pose estimation over a dataset.

use std::path::{Path, PathBuf};
use std::time::Instant;

use dockport::dataset::{self, Dataset, PoseRecord};
use dockport::eval::{estimates_to_csv, EstimateRow};
use dockport::events::{build_histograms, histogram_to_frame, EventHistogram, EventStream};
use dockport::filters::{CnnWeights, FilterRegistry, FilterSpec, FrameContext, InputFrame, Modality};
use dockport::geometry::{PortModel, PortPose};
use dockport::pose::{AbortReason, Estimate, Pipeline, PipelineConfig, TemporalFilter, TemporalStatus};
use dockport::raster::MaskImage;
use dockport::synth::interpolate;
use rayon::prelude::*;

use crate::error::CliError;
use crate::manifest::{apply_config_file, apply_config_section, config_entries, RunManifest};
use crate::overlay;

#[derive(Debug, Clone)]
pub struct EstimatePlan {
    pub dataset: PathBuf,
    pub out: PathBuf,
    pub filter: String,
    pub modality: Modality,
    pub weights: Vec<PathBuf>,
    pub pipeline: PipelineConfig,
    pub overlays: Option<PathBuf>,
    /// Worker threads; never changes the output.
    pub jobs: usize,
}

/// Command-line overrides applied on top of the config file.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub events: Option<usize>,
    pub gamma_s: Option<usize>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EstimateSummary {
    pub frames: usize,
    pub estimated: usize,
    pub accepted: usize,
    pub fps: f64,
}

enum Source {
    Frame(usize),
    Histogram(EventHistogram),
}

struct Item {
    index: usize,
    timestamp_us: u64,
    gt: PortPose,
    source: Source,
}

/// Ground truth at `t`, interpolated between the bracketing pose rows.
fn pose_at(rows: &[PoseRecord], t: u64) -> PortPose {
    let i = rows.partition_point(|r| r.timestamp_us <= t);
    if i == 0 {
        return rows[0].pose;
    }
    if i == rows.len() {
        return rows[i - 1].pose;
    }
    let (a, b) = (&rows[i - 1], &rows[i]);
    let f = (t - a.timestamp_us) as f64 / (b.timestamp_us - a.timestamp_us) as f64;
    interpolate(&a.pose, &b.pose, f)
}

/// Ground-truth poses at the histogram timestamps, written next to the
/// estimates in event mode.
pub fn gt_path_for(out: &Path) -> PathBuf {
    out.with_extension("gt.csv")
}

impl EstimatePlan {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        dataset: PathBuf,
        out: PathBuf,
        config: Option<&Path>,
        filter: String,
        modality: Modality,
        weights: Vec<PathBuf>,
        overrides: Overrides,
        overlays: Option<PathBuf>,
        jobs: usize,
    ) -> Result<Self, CliError> {
        let mut pipeline = PipelineConfig::default();
        apply_config_file(&mut pipeline, config)?;
        if let Some(n) = overrides.events {
            pipeline.events_per_histogram = n;
        }
        if let Some(g) = overrides.gamma_s {
            pipeline.gamma_s = g;
        }
        if let Some(s) = overrides.seed {
            pipeline.ransac.rng_seed = s;
        }
        dockport::config::KvConfig::validate(&pipeline)?;
        Ok(Self {
            dataset,
            out,
            filter,
            modality,
            weights,
            pipeline,
            overlays,
            jobs,
        })
    }

    pub fn from_manifest(m: &RunManifest, out: Option<PathBuf>, jobs: Option<usize>) -> Result<Self, CliError> {
        let l = m.lookup();
        let mut pipeline = PipelineConfig::default();
        apply_config_section(&mut pipeline, &l)?;
        Ok(Self {
            dataset: l.path("input.dataset")?,
            out: out.map_or_else(|| l.path("output.csv"), Ok)?,
            filter: l.require("option.filter")?.to_string(),
            modality: l.parse("option.modality")?,
            weights: l.list("input.weights").into_iter().map(PathBuf::from).collect(),
            pipeline,
            overlays: l.get("output.overlays").map(PathBuf::from),
            jobs: match jobs {
                Some(j) => j,
                None => l.parse("option.jobs")?,
            },
        })
    }

    pub fn manifest(&self) -> RunManifest {
        let mut e = vec![
            ("input.dataset".to_string(), self.dataset.display().to_string()),
            ("output.csv".to_string(), self.out.display().to_string()),
            ("option.filter".to_string(), self.filter.clone()),
            ("option.modality".to_string(), self.modality.to_string()),
            ("option.jobs".to_string(), self.jobs.to_string()),
        ];
        for (i, w) in self.weights.iter().enumerate() {
            e.push((format!("input.weights.{i}"), w.display().to_string()));
        }
        if let Some(o) = &self.overlays {
            e.push(("output.overlays".to_string(), o.display().to_string()));
        }
        e.extend(config_entries(&self.pipeline));
        RunManifest::new("estimate", e)
    }

    fn build_pipeline(&self, ds: &Dataset) -> Result<Pipeline, CliError> {
        let radius = match ds.manifest_value("ring_radius") {
            Some(v) => v
                .parse()
                .map_err(|_| CliError::Config(format!("dataset ring_radius `{v}` is not a number")))?,
            None => PortModel::default().ring_radius(),
        };
        let model = PortModel::with_radius(radius)?;
        let mut spec = FilterSpec::new(self.modality, model.clone(), ds.camera);
        for w in &self.weights {
            spec.weights.push(CnnWeights::load(w)?);
        }
        let filters = FilterRegistry::builtin().create(&self.filter, &spec)?;
        Ok(Pipeline::new(self.pipeline, model, ds.camera, filters))
    }

    fn items(&self, ds: &Dataset) -> Result<Vec<Item>, CliError> {
        if ds.poses.is_empty() {
            return Err(CliError::Config(format!("dataset {} has no frames", ds.dir.display())));
        }
        match self.modality {
            Modality::Rgb => Ok(ds
                .poses
                .iter()
                .enumerate()
                .map(|(i, r)| Item {
                    index: i,
                    timestamp_us: r.timestamp_us,
                    gt: r.pose,
                    source: Source::Frame(i),
                })
                .collect()),
            Modality::Event => {
                let path = ds.events_path();
                if !path.exists() {
                    return Err(CliError::Io(format!(
                        "{}: no event stream (generate the dataset with events enabled)",
                        path.display()
                    )));
                }
                let stream = EventStream::load(&path)?;
                let hists = build_histograms(&stream, self.pipeline.events_per_histogram)?;
                Ok(hists
                    .into_iter()
                    .enumerate()
                    .map(|(i, h)| Item {
                        index: i,
                        timestamp_us: h.t_end,
                        gt: pose_at(&ds.poses, h.t_end),
                        source: Source::Histogram(h),
                    })
                    .collect())
            }
        }
    }

    fn process(&self, ds: &Dataset, p: &Pipeline, item: &Item) -> Result<Result<Estimate, AbortReason>, CliError> {
        let (frame, gray) = match &item.source {
            Source::Frame(i) => {
                let g = MaskImage::load_pgm(&ds.frame_path(*i))?;
                (InputFrame::from_gray(&g, self.modality), g)
            }
            Source::Histogram(h) => {
                let f = histogram_to_frame(h, self.pipeline.histogram_clamp);
                let g = f.luminance();
                (f, g)
            }
        };
        // the ground-truth filter prefers stored masks over re-rendering
        let masks = match (&item.source, self.filter == "ground-truth") {
            (Source::Frame(i), true) if ds.ring_mask_path(*i).exists() => Some((
                MaskImage::load_pgm(&ds.ring_mask_path(*i))?,
                MaskImage::load_pgm(&ds.reflector_mask_path(*i))?,
            )),
            _ => None,
        };
        let ctx = FrameContext {
            gt_pose: Some(&item.gt),
            gt_ring: masks.as_ref().map(|m| &m.0),
            gt_reflector: masks.as_ref().map(|m| &m.1),
        };
        let outcome = p.estimate(&frame, &ctx)?;
        if let (Some(dir), Ok(e)) = (&self.overlays, &outcome) {
            let path = dir.join(format!("overlay_{:05}.pgm", item.index));
            overlay::draw(&gray, e, &p.model, &p.camera).save_pgm(&path)?;
        }
        Ok(outcome)
    }

    pub fn run(&self) -> Result<EstimateSummary, CliError> {
        let ds = Dataset::open(&self.dataset)?;
        let pipeline = self.build_pipeline(&ds)?;
        let items = self.items(&ds)?;
        if let Some(dir) = &self.overlays {
            std::fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
        }
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(self.jobs.max(1))
            .build()
            .map_err(|e| CliError::Internal(format!("thread pool: {e}")))?;
        let start = Instant::now();
        let outcomes: Vec<Result<Estimate, AbortReason>> = pool.install(|| {
            items
                .par_iter()
                .map(|it| self.process(&ds, &pipeline, it))
                .collect::<Result<_, _>>()
        })?;
        let seconds = start.elapsed().as_secs_f64();

        // sequential pass in frame order
        let mut temporal = TemporalFilter::new(self.pipeline.outlier_threshold_deg);
        let rows: Vec<EstimateRow> = items
            .iter()
            .zip(&outcomes)
            .map(|(it, o)| EstimateRow {
                timestamp_us: it.timestamp_us,
                outcome: o.as_ref().map(|e| e.pose).map_err(|a| *a),
                score: o.as_ref().map_or(0.0, |e| e.score),
                temporal: o.as_ref().ok().map(|e| temporal.push(&e.pose.rotation, it.timestamp_us)),
            })
            .collect();
        write_file(&self.out, estimates_to_csv(&rows).as_bytes())?;
        if self.modality == Modality::Event {
            let gt: Vec<PoseRecord> = items
                .iter()
                .map(|it| PoseRecord {
                    timestamp_us: it.timestamp_us,
                    pose: it.gt,
                })
                .collect();
            write_file(&gt_path_for(&self.out), dataset::poses_to_csv(&gt).as_bytes())?;
        }

        let summary = EstimateSummary {
            frames: rows.len(),
            estimated: rows.iter().filter(|r| r.outcome.is_ok()).count(),
            accepted: rows.iter().filter(|r| r.temporal == Some(TemporalStatus::Accepted)).count(),
            fps: rows.len() as f64 / seconds.max(1e-9),
        };
        let mut aborts: Vec<String> = AbortReason::ALL
            .iter()
            .map(|a| (a, rows.iter().filter(|r| r.outcome == Err(*a)).count()))
            .filter(|(_, n)| *n > 0)
            .map(|(a, n)| format!("{a}={n}"))
            .collect();
        if aborts.is_empty() {
            aborts.push("none".into());
        }
        println!(
            "{} frames, {} estimated, {} accepted; aborts: {}",
            summary.frames,
            summary.estimated,
            summary.accepted,
            aborts.join(" ")
        );
        println!("{:.1} frames/s ({} jobs)", summary.fps, self.jobs.max(1));
        Ok(summary)
    }
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    std::fs::write(path, bytes).map_err(|e| CliError::io(path, e))
}
