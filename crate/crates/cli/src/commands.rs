//! One function per subcommand. Each reads its inputs, writes files into the
//! output directory and returns the run manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use sha2::{Digest, Sha256};

use diffsim::cde::{conditional_densities, conditional_report, split_by_condition, sst_over_track, SstField};
use diffsim::diffusion::{cross_validate, default_grid, CvConfig, Walk};
use diffsim::io::{write_assessment_csv, write_grid_csv, write_json, write_points_csv};
use diffsim::pipeline::{select_dimension, Simulator};
use diffsim::rng::derive_seed;
use diffsim::trackdata::{read_tracks, synthesize_tracks, write_tracks_csv, SynthSpec, TrackMetric};
use diffsim::validation::{simulated_test, visual_assessment_export, Region};
use diffsim::{DiffusionModel, EmbeddedPoint, Error, Exec, TrackSet};

use crate::config::{Config, TEMPLATE};

/// Why a command stopped.
#[derive(Debug)]
pub enum Failure {
    Input(String),
    Core(Error),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        Failure::Core(e)
    }
}

impl From<std::io::Error> for Failure {
    fn from(e: std::io::Error) -> Self {
        Failure::Core(Error::Io(e))
    }
}

pub type Outcome<T> = std::result::Result<T, Failure>;

#[derive(Clone, Debug, Serialize)]
pub struct OutputFile {
    pub file: String,
    pub sha256: String,
}

/// Provenance of one run; identical manifests imply identical outputs.
#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub command: String,
    pub version: String,
    pub seed: u64,
    pub config_hash: String,
    pub input_hash: Option<String>,
    pub parameters: serde_json::Value,
    pub outputs: Vec<OutputFile>,
    /// Set by `validate`: whether the test rejected at `validate.alpha`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rejected: Option<bool>,
}

pub struct Run {
    pub config: Config,
    pub exec: Exec,
    outputs: Vec<OutputFile>,
    input_hash: Option<String>,
}

fn hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

impl Run {
    pub fn new(config: Config, exec: Exec) -> Self {
        Run {
            config,
            exec,
            outputs: Vec::new(),
            input_hash: None,
        }
    }

    fn dir(&self) -> &Path {
        &self.config.output.dir
    }

    fn write(&mut self, name: &str, bytes: Vec<u8>) -> Outcome<()> {
        fs::create_dir_all(self.dir())?;
        fs::write(self.dir().join(name), &bytes)?;
        self.outputs.push(OutputFile {
            file: name.to_string(),
            sha256: hex(&bytes),
        });
        Ok(())
    }

    fn write_json<T: Serialize + ?Sized>(&mut self, name: &str, value: &T) -> Outcome<()> {
        let mut buf = Vec::new();
        write_json(&mut buf, value)?;
        self.write(name, buf)
    }

    fn load_tracks(&mut self) -> Outcome<TrackSet> {
        let path = &self.config.input.path;
        if !path.exists() {
            return Err(Failure::Input(format!("input file {} does not exist", path.display())));
        }
        let raw = read_tracks(path, self.config.input.format)?;
        if raw.is_empty() {
            return Err(Failure::Input(format!("input file {} holds no tracks", path.display())));
        }
        let set = TrackSet::regularized(&raw, self.config.input.points)?;
        self.input_hash = Some(set.content_hash());
        Ok(set)
    }

    fn finish(self, command: &str, rejected: Option<bool>) -> Outcome<RunManifest> {
        let parameters = serde_json::to_value(&self.config).map_err(Error::from)?;
        let manifest = RunManifest {
            command: command.to_string(),
            version: env!("CARGO_PKG_VERSION").to_string(),
            seed: self.config.seed,
            config_hash: hex(parameters.to_string().as_bytes()),
            input_hash: self.input_hash,
            parameters,
            outputs: self.outputs,
            rejected,
        };
        let mut buf = Vec::new();
        write_json(&mut buf, &manifest)?;
        fs::create_dir_all(&self.config.output.dir)?;
        fs::write(self.config.output.dir.join(format!("{command}.manifest.json")), buf)?;
        Ok(manifest)
    }

    fn ids(set: &TrackSet) -> Vec<String> {
        set.tracks().iter().map(|t| t.id.clone()).collect()
    }

    fn model(&self, set: &TrackSet) -> Outcome<DiffusionModel> {
        let s = self.config.pipeline();
        let eps = s.epsilon.resolve(set, s.metric)?;
        Ok(DiffusionModel::build_with_metric(set, s.metric, eps, s.t, s.m)?)
    }
}

pub fn init(path: &Path) -> Outcome<()> {
    if path.exists() {
        return Err(Failure::Input(format!("{} already exists", path.display())));
    }
    fs::write(path, TEMPLATE)?;
    Ok(())
}

pub fn synth(mut run: Run) -> Outcome<RunManifest> {
    let spec = SynthSpec {
        points: run.config.input.points,
        condition_shift: run.config.synth.condition_shift,
        ..SynthSpec::default()
    };
    let data = synthesize_tracks(run.config.synth.n, &spec, run.config.seed)?;
    let mut buf = Vec::new();
    write_tracks_csv(data.tracks.tracks(), &mut buf)?;
    run.write("tracks.csv", buf)?;

    let mut years = String::from("id,year\n");
    for (t, y) in data.tracks.tracks().iter().zip(data.tracks.years()) {
        years.push_str(&format!("{},{}\n", t.id, y.expect("synthetic tracks carry years")));
    }
    run.write("years.csv", years.into_bytes())?;

    let mut cond = String::from("year,value\n");
    for (y, v) in &data.condition {
        cond.push_str(&format!("{y},{v}\n"));
    }
    run.write("condition.csv", cond.into_bytes())?;

    let mut lat = String::from("id,genesis,heading,curvature\n");
    for (t, l) in data.tracks.tracks().iter().zip(&data.latents) {
        lat.push_str(&format!("{},{},{},{}\n", t.id, l.genesis, l.heading, l.curvature));
    }
    run.write("latents.csv", lat.into_bytes())?;
    run.input_hash = Some(data.tracks.content_hash());
    run.finish("synth", None)
}

pub fn embed(mut run: Run) -> Outcome<RunManifest> {
    let set = run.load_tracks()?;
    let s = run.config.pipeline();
    let n = set.len();
    if n >= s.m + 2 {
        let model = run.model(&set)?;
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &Run::ids(&set), &model.embed())?;
        run.write("embedding.csv", buf)?;
        run.write_json("model.json", &model.summary())?;
    } else {
        // Too few tracks for a full model: coordinates straight from the walk.
        if n < 2 {
            return Err(Failure::Input("embedding needs at least two tracks".into()));
        }
        let m = s.m.min(n - 1);
        log::warn!("{n} tracks support at most {m} coordinate(s) without model checks");
        let eps = s.epsilon.resolve(&set, s.metric)?;
        let walk = Walk::new(&set, s.metric, eps)?;
        let points: Vec<EmbeddedPoint> = (0..n)
            .map(|i| {
                EmbeddedPoint(
                    (1..=m)
                        .map(|j| walk.eigenvalues()[j].powi(s.t as i32) * walk.eigenvectors()[(i, j)])
                        .collect(),
                )
            })
            .collect();
        let mut buf = Vec::new();
        write_points_csv(&mut buf, &Run::ids(&set), &points)?;
        run.write("embedding.csv", buf)?;
        let summary: BTreeMap<&str, serde_json::Value> = [
            ("epsilon", serde_json::json!(eps)),
            ("t", serde_json::json!(s.t)),
            ("m", serde_json::json!(m)),
            ("n", serde_json::json!(n)),
            ("eigenvalues", serde_json::json!(walk.eigenvalues())),
            ("trackset_hash", serde_json::json!(set.content_hash())),
        ]
        .into_iter()
        .collect();
        run.write_json("model.json", &summary)?;
    }
    run.finish("embed", None)
}

pub fn cv(mut run: Run) -> Outcome<RunManifest> {
    let set = run.load_tracks()?;
    let metric = TrackMetric::default();
    let grid = if run.config.cv.epsilons.is_empty() {
        let steps = &run.config.cv.steps;
        let mut eps: Vec<f64> = default_grid(&set, metric).into_iter().map(|g| g.0).collect();
        eps.dedup();
        eps.iter().flat_map(|&e| steps.iter().map(move |&t| (e, t))).collect()
    } else {
        let steps = &run.config.cv.steps;
        run.config
            .cv
            .epsilons
            .iter()
            .flat_map(|&e| steps.iter().map(move |&t| (e, t)))
            .collect()
    };
    let report = cross_validate(
        &set,
        &CvConfig {
            grid,
            m: run.config.model.m,
            preimage: run.config.preimage(),
            metric,
            exec: run.exec,
        },
    )?;
    run.write_json("cv.json", &report)?;
    run.finish("cv", None)
}

pub fn dim(mut run: Run) -> Outcome<RunManifest> {
    let set = run.load_tracks()?;
    let report = select_dimension(
        &set,
        &run.config.dim.candidates,
        run.config.dim.sims,
        &run.config.pipeline(),
        run.config.seed,
        run.exec,
    )?;
    run.write_json("dim.json", &report)?;
    run.finish("dim", None)
}

pub fn fit(mut run: Run) -> Outcome<RunManifest> {
    let set = run.load_tracks()?;
    let sim = Simulator::fit(&set, &run.config.pipeline())?;
    let mut buf = Vec::new();
    write_points_csv(&mut buf, &Run::ids(&set), &sim.model().embed())?;
    run.write("embedding.csv", buf)?;
    run.write_json("model.json", &sim.model().summary())?;

    let d = sim.density();
    let (lo, hi) = d.support_box(run.config.density.grid_width);
    let grid = d.evaluate_grid(&lo, &hi, run.config.density.grid_resolution, run.exec)?;
    let mut buf = Vec::new();
    write_grid_csv(&mut buf, d.dim(), &grid)?;
    run.write("density_grid.csv", buf)?;
    run.write_json(
        "density.json",
        &serde_json::json!({ "k": d.k(), "bandwidths": d.bandwidths(), "lo": lo, "hi": hi }),
    )?;
    run.finish("fit", None)
}

pub fn simulate(mut run: Run) -> Outcome<RunManifest> {
    let set = run.load_tracks()?;
    let sim = Simulator::fit(&set, &run.config.pipeline())?;
    let count = run.config.simulate.count.unwrap_or(set.len());
    let out = sim.simulate(count, run.config.seed, run.exec)?;
    let mut buf = Vec::new();
    write_tracks_csv(&out.tracks(), &mut buf)?;
    run.write("simulated.csv", buf)?;
    let ids: Vec<String> = out.preimages.iter().map(|r| r.track.id.clone()).collect();
    let mut buf = Vec::new();
    write_points_csv(&mut buf, &ids, &out.points)?;
    run.write("simulated_points.csv", buf)?;
    run.finish("simulate", None)
}

pub fn validate(mut run: Run) -> Outcome<RunManifest> {
    let set = run.load_tracks()?;
    let settings = run.config.pipeline();
    let sim = Simulator::fit(&set, &settings)?;
    let n = set.len();
    let k = run.config.validate.k;
    let seed = run.config.seed;
    let sampler = |s: u64| sim.simulate_tracks(n, s, Exec::Sequential);
    let report = simulated_test(sampler, set.tracks(), k, seed, settings.metric, run.exec)?;

    // The compared simulated set is the one drawn last, seeded `derive_seed(seed, 2k)`.
    let compared = sim.simulate_tracks(n, derive_seed(seed, 2 * k as u64), run.exec)?;
    let model = sim.model();
    let observed: Vec<(String, EmbeddedPoint)> = (0..n).map(|i| (set.get(i).id.clone(), model.embed_index(i))).collect();
    let simulated = run
        .exec
        .try_map(compared.len(), |i| Ok::<_, Error>((compared[i].id.clone(), model.nystrom_extend(&compared[i])?)))?;
    let rows = visual_assessment_export(&report, &observed, &simulated)?;
    let mut buf = Vec::new();
    write_assessment_csv(&mut buf, &rows)?;
    run.write("assessment.csv", buf)?;

    let rejected = report.rejects(run.config.validate.alpha);
    run.write_json(
        "validation.json",
        &serde_json::json!({
            "summary": report.summary(),
            "alpha": run.config.validate.alpha,
            "rejected": rejected,
            "null_proportions": report.null_proportions,
        }),
    )?;
    run.finish("validate", Some(rejected))
}

fn read_pairs(path: &Path, what: &str) -> Outcome<Vec<(String, String)>> {
    if !path.exists() {
        return Err(Failure::Input(format!("{what} file {} does not exist", path.display())));
    }
    let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_path(path).map_err(|e| {
        Failure::Input(format!("{}: {e}", path.display()))
    })?;
    let mut out = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| Failure::Input(format!("{}: {e}", path.display())))?;
        if rec.len() != 2 {
            return Err(Failure::Input(format!("{}: expected two columns", path.display())));
        }
        out.push((rec[0].to_string(), rec[1].to_string()));
    }
    Ok(out)
}

fn parse_num<T: std::str::FromStr>(path: &Path, v: &str) -> Outcome<T> {
    v.parse()
        .map_err(|_| Failure::Input(format!("{}: cannot parse `{v}`", path.display())))
}

pub fn cde(mut run: Run) -> Outcome<RunManifest> {
    let set = run.load_tracks()?;
    let years_path: PathBuf = run.config.cde.years.clone();
    let mut by_id = BTreeMap::new();
    for (id, y) in read_pairs(&years_path, "years")? {
        by_id.insert(id, parse_num::<i32>(&years_path, &y)?);
    }
    let years: Vec<Option<i32>> = set.tracks().iter().map(|t| by_id.get(&t.id).copied()).collect();
    let set = TrackSet::with_years(set.tracks().to_vec(), years)?;

    let cond_path = run.config.cde.condition.clone();
    let mut condition = Vec::new();
    for (y, v) in read_pairs(&cond_path, "condition")? {
        condition.push((parse_num::<i32>(&cond_path, &y)?, parse_num::<f64>(&cond_path, &v)?));
    }

    let split = split_by_condition(&set, &condition, run.config.cde.count)?;
    let model = run.model(&set)?;
    let cd = conditional_densities(&model, &split, run.config.density.k)?;
    let region = Region::new(run.config.cde.region.clone());
    let report = conditional_report(&cd, &split, &region);
    run.write_json("cde.json", &report)?;

    // Both densities on one shared grid so the surfaces can be differenced.
    let (mut lo, mut hi) = cd.hot.support_box(run.config.density.grid_width);
    let (clo, chi) = cd.cold.support_box(run.config.density.grid_width);
    for c in 0..lo.len() {
        lo[c] = lo[c].min(clo[c]);
        hi[c] = hi[c].max(chi[c]);
    }
    for (name, d) in [("hot_grid.csv", &cd.hot), ("cold_grid.csv", &cd.cold)] {
        let grid = d.evaluate_grid(&lo, &hi, run.config.density.grid_resolution, run.exec)?;
        let mut buf = Vec::new();
        write_grid_csv(&mut buf, d.dim(), &grid)?;
        run.write(name, buf)?;
    }

    if let Some(path) = run.config.cde.sst.clone() {
        if !path.exists() {
            return Err(Failure::Input(format!("field file {} does not exist", path.display())));
        }
        let field = SstField::read_csv(fs::File::open(&path)?)?;
        let mut out = String::from("id,time,value\n");
        for t in set.tracks() {
            for &time in field.times() {
                out.push_str(&format!("{},{},{}\n", t.id, time, sst_over_track(&field, t, time)?));
            }
        }
        run.write("sst_over_track.csv", out.into_bytes())?;
    }
    run.finish("cde", None)
}
