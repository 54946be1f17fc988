//! Benchmark orchestration: seeded episode suites over generated scenes,
//! ablation presets, parallel execution with deterministic aggregation,
//! and the JSONL / summary-table output formats.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::episode::{
    compute_metrics, run_episode, EpisodeContext, EpisodeEvent, EpisodeMode, EpisodeOutcome,
    EpisodeResult, EpisodeSpec, GoalKind, LoopParams, Metrics,
};
use crate::error::{Error, Result};
use crate::geometry::Pose;
use crate::policy::{AdapterParams, AlignmentMode, ControlParams};
use crate::retrieval::RetrievalMode;
use crate::rng::substream;
use crate::simworld::{
    generate_scene, generate_tour, geodesic_distance, inject_obstacles, RenderParams, Scene,
    SceneParams, TourParams,
};
use crate::smg::{build_graph, GraphParams, MemoryGraph};

/// Everything that defines a benchmark suite: how scenes are generated,
/// how many episodes run on each, and the default stack parameters.
#[derive(Clone, Debug)]
pub struct SuiteParams {
    pub scene_count: usize,
    pub episodes_per_scene: usize,
    /// Scene i uses seed `base_seed + i`; episode seeds derive from it.
    pub base_seed: u64,
    /// Scene template; the per-scene seed overrides its `seed` field.
    pub scene: SceneParams,
    pub tour: TourParams,
    pub graph: GraphParams,
    pub render: RenderParams,
    pub control: ControlParams,
    pub loop_params: LoopParams,
    pub max_steps: u64,
    pub success_radius: f64,
    /// Sampled episode endpoints keep their geodesic separation in
    /// [min_geodesic, max_geodesic] meters.
    pub min_geodesic: f64,
    pub max_geodesic: f64,
}

impl Default for SuiteParams {
    fn default() -> Self {
        SuiteParams {
            scene_count: 20,
            episodes_per_scene: 5,
            base_seed: 1,
            scene: SceneParams {
                extent: (12.0, 12.0),
                object_count: 16,
                seed: 0,
                ..SceneParams::default()
            },
            tour: TourParams::default(),
            graph: GraphParams::default(),
            render: RenderParams::default(),
            control: ControlParams::default(),
            loop_params: LoopParams::default(),
            max_steps: 500,
            success_radius: 1.0,
            min_geodesic: 3.5,
            max_geodesic: 9.0,
        }
    }
}

/// One benchmark configuration row.
#[derive(Clone, Debug, PartialEq)]
pub struct Variant {
    pub label: String,
    pub mode: EpisodeMode,
    pub alignment: AlignmentMode,
    pub retrieval_mode: RetrievalMode,
    /// Override of (node_spacing, region_radius) for sparsity sweeps.
    pub graph_override: Option<(f64, f64)>,
    /// Obstacles injected into the runtime scene (graphs stay clean).
    pub obstacles: usize,
}

impl Variant {
    /// The full stack at suite defaults.
    pub fn full(label: &str) -> Variant {
        Variant {
            label: label.to_string(),
            mode: EpisodeMode::Full,
            alignment: AlignmentMode::Fused,
            retrieval_mode: RetrievalMode::Hybrid,
            graph_override: None,
            obstacles: 0,
        }
    }
}

/// The ablation families mirrored from the evaluation protocol.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Ablation {
    /// policy-only vs graph with raw alignment vs graph with the adapter.
    Component,
    /// keyframe-only vs object-only vs hybrid localization.
    Retrieval,
    /// Graph sparsity presets, sparsest first.
    Sparsity,
    /// Runtime obstacle counts {0, 5, 10}.
    Robustness,
}

impl Ablation {
    pub fn variants(self) -> Vec<Variant> {
        match self {
            Ablation::Component => vec![
                Variant {
                    label: "policy-only".into(),
                    mode: EpisodeMode::PolicyOnly,
                    ..Variant::full("")
                },
                Variant {
                    label: "graph-raw-alignment".into(),
                    alignment: AlignmentMode::RawEmbedding,
                    ..Variant::full("")
                },
                Variant::full("graph-adapter-fused"),
            ],
            Ablation::Retrieval => vec![
                Variant {
                    label: "keyframe-only".into(),
                    retrieval_mode: RetrievalMode::KeyframeOnly,
                    ..Variant::full("")
                },
                Variant {
                    label: "object-only".into(),
                    retrieval_mode: RetrievalMode::ObjectOnly,
                    ..Variant::full("")
                },
                Variant {
                    label: "hybrid".into(),
                    retrieval_mode: RetrievalMode::Hybrid,
                    ..Variant::full("")
                },
            ],
            Ablation::Sparsity => vec![
                Variant {
                    label: "d2.0-r1.0".into(),
                    graph_override: Some((2.0, 1.0)),
                    ..Variant::full("")
                },
                Variant {
                    label: "d1.5-r0.8".into(),
                    graph_override: Some((1.5, 0.8)),
                    ..Variant::full("")
                },
                Variant {
                    label: "d1.0-r0.5".into(),
                    graph_override: Some((1.0, 0.5)),
                    ..Variant::full("")
                },
            ],
            Ablation::Robustness => [0usize, 5, 10]
                .into_iter()
                .map(|count| Variant {
                    label: format!("obstacles-{count}"),
                    obstacles: count,
                    ..Variant::full("")
                })
                .collect(),
        }
    }
}

/// One JSONL record: the per-episode summary written to results files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub id: u64,
    pub scene_seed: u64,
    pub seed: u64,
    pub success: bool,
    pub steps: u64,
    pub path_length: f64,
    pub geodesic_optimum: f64,
    pub localizations: usize,
    pub replans: usize,
    pub image_goal_calls: usize,
    pub blocked_edges: usize,
    pub collisions: usize,
    pub outcome: String,
}

impl EpisodeRecord {
    fn from_result(result: &EpisodeResult, scene_seed: u64, seed: u64) -> EpisodeRecord {
        let count = |pred: fn(&EpisodeEvent) -> bool| result.count_events(pred);
        EpisodeRecord {
            id: result.spec_id,
            scene_seed,
            seed,
            success: result.success,
            steps: result.steps,
            path_length: result.path_length,
            geodesic_optimum: result.geodesic_optimum,
            localizations: count(|e| matches!(e, EpisodeEvent::GlobalLocalize { .. })),
            replans: count(|e| matches!(e, EpisodeEvent::Replanned { .. })),
            image_goal_calls: count(|e| matches!(e, EpisodeEvent::ImageGoalInvoked { .. })),
            blocked_edges: count(|e| matches!(e, EpisodeEvent::BlockedEdgeMarked { .. })),
            collisions: count(|e| matches!(e, EpisodeEvent::Collision { .. })),
            outcome: match result.outcome {
                EpisodeOutcome::Stopped => "stopped".into(),
                EpisodeOutcome::StepLimit => "step-limit".into(),
                EpisodeOutcome::Unreachable => "unreachable".into(),
            },
        }
    }
}

/// Results of one variant over the whole suite.
#[derive(Clone, Debug)]
pub struct BenchmarkRow {
    pub label: String,
    pub metrics: Metrics,
    pub records: Vec<EpisodeRecord>,
    /// Full per-episode results (event logs included), ordered by id.
    pub results: Vec<EpisodeResult>,
}

impl BenchmarkRow {
    /// The row as line-delimited JSON, one record per line, id order.
    pub fn to_jsonl(&self) -> Result<String> {
        let mut out = String::new();
        for record in &self.records {
            out.push_str(&serde_json::to_string(record).map_err(to_format_error)?);
            out.push('\n');
        }
        Ok(out)
    }
}

/// All rows of one benchmark run.
#[derive(Clone, Debug)]
pub struct BenchmarkTable {
    pub rows: Vec<BenchmarkRow>,
}

impl BenchmarkTable {
    /// Plain-text summary, aligned and deterministic.
    pub fn render_text(&self) -> String {
        let width = self
            .rows
            .iter()
            .map(|r| r.label.len())
            .chain(["variant".len()])
            .max()
            .unwrap_or(8);
        let mut out = String::new();
        let _ = writeln!(out, "{:<width$}  {:>8}  {:>8}  {:>8}", "variant", "SR", "SPL", "episodes");
        for row in &self.rows {
            let _ = writeln!(
                out,
                "{:<width$}  {:>8.4}  {:>8.4}  {:>8}",
                row.label, row.metrics.success_rate, row.metrics.spl, row.metrics.episodes
            );
        }
        out
    }

    /// Machine-readable summary: (label, SR, SPL, episodes) per row.
    pub fn to_json(&self) -> Result<String> {
        #[derive(Serialize)]
        struct RowSummary<'a> {
            label: &'a str,
            success_rate: f64,
            spl: f64,
            episodes: usize,
        }
        let rows: Vec<RowSummary> = self
            .rows
            .iter()
            .map(|r| RowSummary {
                label: &r.label,
                success_rate: r.metrics.success_rate,
                spl: r.metrics.spl,
                episodes: r.metrics.episodes,
            })
            .collect();
        serde_json::to_string_pretty(&rows).map_err(to_format_error)
    }
}

fn to_format_error(e: serde_json::Error) -> Error {
    Error::Format(e.to_string())
}

/// One scene with everything episodes on it need.
struct SceneSetup {
    scene_seed: u64,
    clean: Scene,
    runtime: Scene,
    graph: MemoryGraph,
    specs: Vec<EpisodeSpec>,
}

/// Run a whole ablation: every variant over the same episode suite.
/// Setups are shared between variants with identical graph parameters and
/// obstacle counts, so e.g. the retrieval sweep builds its graphs once.
pub fn run_benchmark(suite: &SuiteParams, ablation: Ablation) -> Result<BenchmarkTable> {
    let mut cache: BTreeMap<(Option<(u64, u64)>, usize), Arc<Vec<SceneSetup>>> = BTreeMap::new();
    let mut rows = Vec::new();
    for variant in ablation.variants() {
        let key = (
            variant
                .graph_override
                .map(|(d, r)| (d.to_bits(), r.to_bits())),
            variant.obstacles,
        );
        let setups = match cache.get(&key) {
            Some(s) => Arc::clone(s),
            None => {
                let built = Arc::new(build_setups(suite, &variant)?);
                cache.insert(key, Arc::clone(&built));
                built
            }
        };
        rows.push(run_episodes(suite, &variant, &setups)?);
    }
    Ok(BenchmarkTable { rows })
}

/// Run a single variant over a freshly built suite.
pub fn run_variant(suite: &SuiteParams, variant: &Variant) -> Result<BenchmarkRow> {
    let setups = build_setups(suite, variant)?;
    run_episodes(suite, variant, &setups)
}

/// Generate every scene of the suite: clean scene, demonstration tour,
/// memory graph (on the clean scene), runtime scene with any injected
/// obstacles, and the episode specs shared by all variants.
fn build_setups(suite: &SuiteParams, variant: &Variant) -> Result<Vec<SceneSetup>> {
    if suite.scene_count == 0 || suite.episodes_per_scene == 0 {
        return Err(Error::InvalidParameter("benchmark suite is empty".into()));
    }
    let mut graph_params = suite.graph.clone();
    if let Some((spacing, radius)) = variant.graph_override {
        graph_params.node_spacing = spacing;
        graph_params.region_radius = radius;
    }

    (0..suite.scene_count)
        .into_par_iter()
        .map(|index| {
            let scene_seed = suite.base_seed + index as u64;
            let clean = generate_scene(&SceneParams {
                seed: scene_seed,
                ..suite.scene.clone()
            })?;
            let tour = generate_tour(&clean, &suite.tour, scene_seed)?;
            let graph = build_graph(&tour, &graph_params)?;
            let specs = episode_specs(&clean, scene_seed, index, suite)?;
            let protected: Vec<_> = specs
                .iter()
                .flat_map(|s| [s.start.xy(), s.goal.xy()])
                .collect();
            let runtime = if variant.obstacles > 0 {
                inject_obstacles(&clean, variant.obstacles, &protected, scene_seed)?
            } else {
                clean.clone()
            };
            Ok(SceneSetup {
                scene_seed,
                clean,
                runtime,
                graph,
                specs,
            })
        })
        .collect()
}

/// Deterministic endpoint sampling: free-cell pairs re-drawn until their
/// geodesic separation lands inside the suite's range.
fn episode_specs(
    scene: &Scene,
    scene_seed: u64,
    scene_index: usize,
    suite: &SuiteParams,
) -> Result<Vec<EpisodeSpec>> {
    let mut rng = substream(scene_seed, "suite-episodes");
    let free = scene.free_cells();
    if free.is_empty() {
        return Err(Error::SceneGeneration("scene has no free cells".into()));
    }
    let mut specs = Vec::with_capacity(suite.episodes_per_scene);
    for slot in 0..suite.episodes_per_scene {
        let mut endpoints = None;
        for _ in 0..400 {
            let (sr, sc) = free[rng.gen_range(0..free.len())];
            let (gr, gc) = free[rng.gen_range(0..free.len())];
            let start = scene.cell_center(sr, sc);
            let goal = scene.cell_center(gr, gc);
            let l = geodesic_distance(scene, start, goal)?;
            if l.is_finite() && l >= suite.min_geodesic && l <= suite.max_geodesic {
                endpoints = Some((start, goal));
                break;
            }
        }
        let (start, goal) = endpoints.ok_or_else(|| {
            Error::SceneGeneration(format!(
                "scene {scene_seed}: no endpoint pair within geodesic range after 400 draws"
            ))
        })?;
        let start_yaw = rng.gen_range(0..4) as f64 * std::f64::consts::FRAC_PI_2;
        let goal_yaw = rng.gen_range(0..4) as f64 * std::f64::consts::FRAC_PI_2;
        let seed = rng.gen::<u64>();
        specs.push(EpisodeSpec {
            id: (scene_index * suite.episodes_per_scene + slot) as u64,
            start: Pose::planar(start.x, start.y, start_yaw)?,
            goal: Pose::planar(goal.x, goal.y, goal_yaw)?,
            goal_kind: GoalKind::ImageGoal,
            seed,
            max_steps: suite.max_steps,
            success_radius: suite.success_radius,
            loop_params: suite.loop_params.clone(),
        })
    }
    Ok(specs)
}

/// Execute every episode of the suite under one variant, in parallel,
/// then aggregate in id order so worker count cannot affect the output.
fn run_episodes(
    suite: &SuiteParams,
    variant: &Variant,
    setups: &[SceneSetup],
) -> Result<BenchmarkRow> {
    let adapter = AdapterParams::seeded(
        suite.render.geometry_channels,
        crate::policy::DEFAULT_HIDDEN_DIM,
        crate::policy::DEFAULT_OUTPUT_DIM,
        suite.base_seed,
    )?;
    let mut control = suite.control.clone();
    control.alignment_mode = variant.alignment;

    let units: Vec<(&SceneSetup, &EpisodeSpec)> = setups
        .iter()
        .flat_map(|setup| setup.specs.iter().map(move |spec| (setup, spec)))
        .collect();

    let mut outputs: Vec<(u64, EpisodeRecord, EpisodeResult)> = units
        .par_iter()
        .map(|(setup, spec)| {
            let mut spec = (*spec).clone();
            spec.loop_params.retrieval_mode = variant.retrieval_mode;
            let ctx = EpisodeContext {
                scene: &setup.runtime,
                goal_scene: &setup.clean,
                graph: &setup.graph,
                adapter: &adapter,
                render: suite.render.clone(),
                control: control.clone(),
                mode: variant.mode,
                noise_sigma: 0.0,
            };
            let (record, result) = match run_episode(&spec, &ctx) {
                Ok(result) => (
                    EpisodeRecord::from_result(&result, setup.scene_seed, spec.seed),
                    result,
                ),
                // A failed setup is an episode failure, not a suite abort.
                Err(err) => failed_episode(&spec, setup.scene_seed, err),
            };
            (spec.id, record, result)
        })
        .collect();
    outputs.sort_by_key(|(id, _, _)| *id);

    let results: Vec<EpisodeResult> = outputs.iter().map(|(_, _, r)| r.clone()).collect();
    let records: Vec<EpisodeRecord> = outputs.into_iter().map(|(_, rec, _)| rec).collect();
    let metrics = compute_metrics(&results)?;
    Ok(BenchmarkRow {
        label: variant.label.clone(),
        metrics,
        records,
        results,
    })
}

fn failed_episode(
    spec: &EpisodeSpec,
    scene_seed: u64,
    err: Error,
) -> (EpisodeRecord, EpisodeResult) {
    let result = EpisodeResult {
        spec_id: spec.id,
        success: false,
        steps: 0,
        path_length: 0.0,
        geodesic_optimum: 0.0,
        outcome: EpisodeOutcome::StepLimit,
        trajectory: vec![spec.start],
        events: Vec::new(),
    };
    let mut record = EpisodeRecord::from_result(&result, scene_seed, spec.seed);
    record.outcome = format!("error: {err}");
    (record, result)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_suite() -> SuiteParams {
        SuiteParams {
            scene_count: 2,
            episodes_per_scene: 2,
            base_seed: 41,
            max_steps: 220,
            ..SuiteParams::default()
        }
    }

    #[test]
    fn variant_rerun_is_byte_identical() {
        let suite = tiny_suite();
        let variant = Variant::full("full");
        let a = run_variant(&suite, &variant).unwrap();
        let b = run_variant(&suite, &variant).unwrap();
        assert_eq!(a.to_jsonl().unwrap(), b.to_jsonl().unwrap());
        assert_eq!(a.metrics, b.metrics);
    }

    #[test]
    fn worker_count_does_not_change_output() {
        let suite = tiny_suite();
        let variant = Variant::full("full");
        let parallel = run_variant(&suite, &variant).unwrap();
        let single = rayon::ThreadPoolBuilder::new()
            .num_threads(1)
            .build()
            .unwrap()
            .install(|| run_variant(&suite, &variant))
            .unwrap();
        assert_eq!(parallel.to_jsonl().unwrap(), single.to_jsonl().unwrap());
    }

    #[test]
    fn ablation_presets_have_expected_rows() {
        let labels = |a: Ablation| -> Vec<String> {
            a.variants().into_iter().map(|v| v.label).collect()
        };
        assert_eq!(
            labels(Ablation::Component),
            ["policy-only", "graph-raw-alignment", "graph-adapter-fused"]
        );
        assert_eq!(labels(Ablation::Retrieval), ["keyframe-only", "object-only", "hybrid"]);
        assert_eq!(labels(Ablation::Sparsity), ["d2.0-r1.0", "d1.5-r0.8", "d1.0-r0.5"]);
        assert_eq!(labels(Ablation::Robustness), ["obstacles-0", "obstacles-5", "obstacles-10"]);
        let sparsity = Ablation::Sparsity.variants();
        assert_eq!(sparsity[0].graph_override, Some((2.0, 1.0)));
        assert_eq!(sparsity[2].graph_override, Some((1.0, 0.5)));
        let robustness = Ablation::Robustness.variants();
        assert_eq!(
            robustness.iter().map(|v| v.obstacles).collect::<Vec<_>>(),
            [0, 5, 10]
        );
    }

    #[test]
    fn episode_specs_are_shared_across_variants() {
        let suite = tiny_suite();
        let full = run_variant(&suite, &Variant::full("full")).unwrap();
        let raw = run_variant(
            &suite,
            &Variant {
                label: "raw".into(),
                alignment: AlignmentMode::RawEmbedding,
                ..Variant::full("")
            },
        )
        .unwrap();
        let ids = |row: &BenchmarkRow| row.records.iter().map(|r| (r.id, r.seed)).collect::<Vec<_>>();
        assert_eq!(ids(&full), ids(&raw), "variants must run identical specs");
    }

    #[test]
    fn summary_table_lists_all_rows() {
        let suite = SuiteParams {
            scene_count: 1,
            episodes_per_scene: 1,
            base_seed: 43,
            max_steps: 120,
            ..SuiteParams::default()
        };
        let table = run_benchmark(&suite, Ablation::Retrieval).unwrap();
        let text = table.render_text();
        for label in ["keyframe-only", "object-only", "hybrid"] {
            assert!(text.contains(label), "missing row {label} in:\n{text}");
        }
        let json = table.to_json().unwrap();
        assert!(json.contains("success_rate"));
    }
}
