//! Synthetic procedure-note generator.
//!
//! Each note is a shuffled list of clauses built as
//! `[laterality] [anatomy] procedure (connector? modifier)*`, with word choice
//! Zipf-distributed inside each role list. Positive labels of a task receive
//! one of that task's designated signal tokens with probability `signal_strength`.

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, Gamma};
use serde::{Deserialize, Serialize};

use super::{ClinicalNote, Dataset, Label, TaskId};
use crate::error::{Error, Result};
use crate::seed::{self, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub name: String,
    /// P(positive | screened).
    pub event_rate: f64,
    /// P(label observed); the rest are Missing.
    #[serde(default = "one")]
    pub screening_rate: f64,
    /// P(a positive note carries one of the task's signal tokens).
    #[serde(default)]
    pub signal_strength: f64,
}

fn one() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorpusSpec {
    pub n_docs: usize,
    /// Size of the word inventory the grammar draws from.
    pub vocab_size: usize,
    pub length_mean: f64,
    pub length_sd: f64,
    #[serde(default = "one_usize")]
    pub length_min: usize,
    pub tasks: Vec<TaskSpec>,
    #[serde(default = "three")]
    pub signal_tokens_per_task: usize,
    #[serde(default = "default_zipf")]
    pub zipf_exponent: f64,
    #[serde(default = "default_prefix")]
    pub id_prefix: String,
    pub seed: u64,
}

fn one_usize() -> usize {
    1
}
fn three() -> usize {
    3
}
fn default_zipf() -> f64 {
    1.0
}
fn default_prefix() -> String {
    "note".into()
}

/// Cohort counts used for the full-scale targets.
const COHORT: f64 = 84_875.0;
const COHORT_POSITIVES: [(&str, f64); 5] =
    [("death30", 1694.0), ("dvt", 498.0), ("pe", 287.0), ("pneumonia", 475.0), ("aki", 11_418.0)];
const DELIRIUM_POSITIVES: f64 = 5695.0;
const DELIRIUM_RATE: f64 = 0.47;

impl CorpusSpec {
    /// Targets matching the published cohort: 84,875 notes, |V| = 3,203,
    /// 8.9 ± 6.9 tokens per note and the six reported event rates.
    pub fn cohort_scale(seed: u64) -> Self {
        let mut tasks: Vec<TaskSpec> = COHORT_POSITIVES
            .iter()
            .map(|&(name, pos)| TaskSpec {
                name: name.into(),
                event_rate: pos / COHORT,
                screening_rate: 1.0,
                signal_strength: 0.5,
            })
            .collect();
        tasks.push(TaskSpec {
            name: "delirium".into(),
            event_rate: DELIRIUM_RATE,
            screening_rate: (DELIRIUM_POSITIVES / DELIRIUM_RATE) / COHORT,
            signal_strength: 0.5,
        });
        CorpusSpec {
            n_docs: COHORT as usize,
            vocab_size: 3203,
            length_mean: 8.9,
            length_sd: 6.9,
            length_min: 1,
            tasks,
            signal_tokens_per_task: 3,
            zipf_exponent: 1.0,
            id_prefix: "note".into(),
            seed,
        }
    }

    /// Six default tasks with a shared event rate and signal strength.
    pub fn planted(n_docs: usize, event_rate: f64, signal_strength: f64, seed: u64) -> Self {
        let mut spec = Self::cohort_scale(seed);
        spec.n_docs = n_docs;
        spec.vocab_size = 600;
        for t in &mut spec.tasks {
            t.event_rate = event_rate;
            t.screening_rate = 1.0;
            t.signal_strength = signal_strength;
        }
        spec
    }

    pub fn validate(&self) -> Result<()> {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        if self.n_docs == 0 {
            return Err(Error::field("n_docs", "must be at least 1"));
        }
        if !(self.length_mean.is_finite() && self.length_mean >= self.length_min as f64) {
            return Err(Error::field("length_mean", "must be finite and at least length_min"));
        }
        if !(self.length_sd.is_finite() && self.length_sd >= 0.0) {
            return Err(Error::field("length_sd", "must be finite and non-negative"));
        }
        if self.length_min == 0 {
            return Err(Error::field("length_min", "must be at least 1"));
        }
        if !(self.zipf_exponent.is_finite() && self.zipf_exponent >= 0.0) {
            return Err(Error::field("zipf_exponent", "must be finite and non-negative"));
        }
        let mut names = std::collections::HashSet::new();
        for (i, t) in self.tasks.iter().enumerate() {
            if !names.insert(t.name.as_str()) {
                return Err(Error::field(format!("tasks[{i}].name"), format!("duplicate task `{}`", t.name)));
            }
            if !unit(t.event_rate) {
                return Err(Error::field(format!("tasks[{i}].event_rate"), "must lie in [0, 1]"));
            }
            if !unit(t.screening_rate) {
                return Err(Error::field(format!("tasks[{i}].screening_rate"), "must lie in [0, 1]"));
            }
            if !unit(t.signal_strength) {
                return Err(Error::field(format!("tasks[{i}].signal_strength"), "must lie in [0, 1]"));
            }
        }
        Grammar::build(self).map(|_| ())
    }

    pub fn registry(&self) -> Vec<TaskId> {
        self.tasks.iter().map(|t| TaskId::binary(&t.name)).collect()
    }
}

const CLOSED_CLASS_SKEW: f64 = 1.6;

const LATERALITY: &[&str] = &["left", "right", "bilateral"];
const CONNECTORS: &[&str] = &[
    "with", "and", "of", "possible", "including", "via", "under", "to", "for", "from", "without", "versus", "at",
    "in", "on",
];
const ANATOMY: &[&str] = &[
    "knee", "hip", "shoulder", "elbow", "wrist", "ankle", "foot", "hand", "spine", "lumbar", "cervical", "thoracic",
    "femur", "tibia", "fibula", "humerus", "radius", "ulna", "patella", "pelvis", "sacrum", "clavicle", "scapula",
    "skull", "brain", "eye", "retina", "cornea", "lens", "ear", "nose", "sinus", "throat", "larynx", "thyroid",
    "parathyroid", "breast", "chest", "lung", "heart", "aorta", "carotid", "femoral", "artery", "vein", "esophagus",
    "stomach", "duodenum", "colon", "rectum", "anus", "appendix", "gallbladder", "liver", "pancreas", "spleen",
    "kidney", "ureter", "bladder", "prostate", "urethra", "uterus", "ovary", "cervix", "testis", "scrotum",
    "abdomen", "inguinal", "umbilical", "ventral", "skin", "tissue", "tendon", "ligament", "meniscus", "rotator",
    "cuff", "disc", "vertebra", "mandible", "maxilla", "orbit", "eyelid", "tonsil", "adenoid", "bowel", "omentum",
    "peritoneum", "diaphragm", "mediastinum", "pleura", "rib", "sternum", "finger", "toe", "thumb",
];
const PROCEDURES: &[&str] = &[
    "arthroplasty", "arthroscopy", "repair", "excision", "resection", "biopsy", "fusion", "fixation", "reduction",
    "replacement", "removal", "revision", "decompression", "laminectomy", "discectomy", "cholecystectomy",
    "appendectomy", "colectomy", "hysterectomy", "prostatectomy", "nephrectomy", "mastectomy", "lumpectomy",
    "thyroidectomy", "tonsillectomy", "craniotomy", "laparotomy", "laparoscopy", "cystoscopy", "colonoscopy",
    "endoscopy", "bronchoscopy", "ureteroscopy", "lithotripsy", "phacoemulsification", "vitrectomy",
    "keratoplasty", "trabeculectomy", "bypass", "angioplasty", "stent", "endarterectomy", "ablation",
    "catheterization", "embolization", "amputation", "debridement", "drainage", "graft", "transplant", "implant",
    "insertion", "exploration", "release", "reconstruction", "osteotomy", "tenotomy", "herniorrhaphy",
    "anastomosis", "stoma", "closure", "incision", "injection", "manipulation", "nailing", "plating",
];
const MODIFIERS: &[&str] = &[
    "open", "closed", "laparoscopic", "robotic", "endoscopic", "percutaneous", "minimally", "invasive", "total",
    "partial", "radical", "simple", "complex", "primary", "secondary", "anterior", "posterior", "lateral", "medial",
    "distal", "proximal", "superior", "inferior", "internal", "external", "intramedullary", "arthroscopic",
    "assisted", "navigation", "guided", "ultrasound", "fluoroscopy", "image", "general", "regional", "anesthesia",
    "block", "sedation", "exam", "staged", "elective", "diagnostic", "therapeutic", "extended", "limited",
    "multilevel", "single", "level", "approach", "cemented", "uncemented", "augmentation", "tumor", "mass",
    "lesion", "cyst", "fracture", "stenosis", "obstruction",
];
const TAIL_PREFIXES: &[&str] =
    &["", "hemi", "endo", "peri", "trans", "sub", "intra", "para", "retro", "micro", "neo", "re", "supra", "infra", "pan"];
const TAIL_ROOTS: &[&str] = &[
    "arthr", "chole", "nephr", "gastr", "lapar", "crani", "cyst", "hyster", "mast", "col", "proct", "rhin", "oste",
    "myel", "angi", "phleb", "cardi", "pneum", "hepat", "splen", "ur", "lith", "my", "neur", "derm", "blephar",
    "kerat", "tympan", "laryng", "trache", "esophag", "enter", "ile", "jejun", "sigmoid", "cervic", "salping",
    "oophor", "orchi", "vas",
];
const TAIL_SUFFIXES: &[&str] = &[
    "ectomy", "otomy", "ostomy", "oplasty", "oscopy", "opexy", "orrhaphy", "olysis", "ography", "otripsy", "odesis",
    "ocentesis",
];

/// Designated signal-token pools, disjoint across the default tasks.
fn signal_pool(task: &str) -> Vec<String> {
    let words: &[&str] = match task {
        "death30" => &["emergent", "exploratory", "palliative", "salvage", "moribund", "unstable"],
        "dvt" => &["immobilized", "varicose", "hypercoagulable", "cast", "prolonged", "tourniquet"],
        "pe" => &["embolectomy", "thrombectomy", "filter", "ivc", "anticoagulated", "clot"],
        "pneumonia" => &["aspiration", "ventilator", "intubated", "pulmonary", "lobectomy", "copd"],
        "aki" => &["contrast", "nephrotoxic", "dialysis", "creatinine", "hypotensive", "fistula"],
        "delirium" => &["elderly", "dementia", "confused", "sedated", "agitated", "frail"],
        _ => &[],
    };
    if words.is_empty() {
        (0..6).map(|k| format!("{task}marker{k}")).collect()
    } else {
        words.iter().map(|s| s.to_string()).collect()
    }
}

struct ZipfList {
    words: Vec<String>,
    cumulative: Vec<f64>,
}

impl ZipfList {
    fn new(words: Vec<String>, exponent: f64) -> Self {
        let mut acc = 0.0;
        let cumulative = (0..words.len())
            .map(|r| {
                acc += 1.0 / ((r + 1) as f64).powf(exponent);
                acc
            })
            .collect();
        ZipfList { words, cumulative }
    }

    fn sample(&self, rng: &mut Rng) -> &str {
        let total = *self.cumulative.last().unwrap();
        let u = rng.random::<f64>() * total;
        let i = self.cumulative.partition_point(|&c| c <= u).min(self.words.len() - 1);
        &self.words[i]
    }
}

struct Grammar {
    laterality: ZipfList,
    connectors: ZipfList,
    anatomy: ZipfList,
    procedures: ZipfList,
    modifiers: ZipfList,
    signals: Vec<Vec<String>>,
}

impl Grammar {
    fn build(spec: &CorpusSpec) -> Result<Grammar> {
        let mut signals = Vec::with_capacity(spec.tasks.len());
        for (i, t) in spec.tasks.iter().enumerate() {
            let pool = signal_pool(&t.name);
            if spec.signal_tokens_per_task > pool.len() {
                return Err(Error::field(
                    "signal_tokens_per_task",
                    format!("task `{}` has only {} designated signal tokens", spec.tasks[i].name, pool.len()),
                ));
            }
            signals.push(pool[..spec.signal_tokens_per_task].to_vec());
        }
        let reserved: std::collections::HashSet<&str> =
            signals.iter().flatten().map(String::as_str).collect();
        let owned = |ws: &[&str]| ws.iter().map(|s| s.to_string()).collect::<Vec<_>>();
        let fixed = LATERALITY.len() + CONNECTORS.len() + ANATOMY.len() + PROCEDURES.len() + MODIFIERS.len();
        let needed = fixed + reserved.len();
        if spec.vocab_size < needed {
            return Err(Error::field(
                "vocab_size",
                format!("template grammar needs at least {needed} words, got {}", spec.vocab_size),
            ));
        }
        let tail_len = spec.vocab_size - needed;
        let tail: Vec<String> = TAIL_PREFIXES
            .iter()
            .flat_map(|p| TAIL_ROOTS.iter().flat_map(move |r| TAIL_SUFFIXES.iter().map(move |s| format!("{p}{r}{s}"))))
            .filter(|w| !reserved.contains(w.as_str()) && !PROCEDURES.contains(&w.as_str()))
            .take(tail_len)
            .collect();
        if tail.len() < tail_len {
            return Err(Error::field(
                "vocab_size",
                format!("template grammar supports at most {} words", needed + tail.len()),
            ));
        }
        let mut procedures = owned(PROCEDURES);
        procedures.extend(tail);
        // Closed-class lists repeat more within a note than procedure names.
        let s = spec.zipf_exponent;
        let closed = s * CLOSED_CLASS_SKEW;
        Ok(Grammar {
            laterality: ZipfList::new(owned(LATERALITY), closed),
            connectors: ZipfList::new(owned(CONNECTORS), closed),
            anatomy: ZipfList::new(owned(ANATOMY), closed),
            procedures: ZipfList::new(procedures, s),
            modifiers: ZipfList::new(owned(MODIFIERS), closed),
            signals,
        })
    }

    fn clause(&self, rng: &mut Rng) -> Vec<String> {
        let mut c = Vec::new();
        if rng.random::<f64>() < 0.35 {
            c.push(self.laterality.sample(rng).to_string());
        }
        if rng.random::<f64>() < 0.6 {
            c.push(self.anatomy.sample(rng).to_string());
        }
        c.push(self.procedures.sample(rng).to_string());
        while rng.random::<f64>() < 0.45 {
            if rng.random::<f64>() < 0.4 {
                c.push(self.connectors.sample(rng).to_string());
            }
            let w = if rng.random::<f64>() < 0.6 { self.modifiers.sample(rng) } else { self.anatomy.sample(rng) };
            c.push(w.to_string());
        }
        c
    }
}

fn sample_length(spec: &CorpusSpec, rng: &mut Rng) -> usize {
    let raw = if spec.length_sd == 0.0 {
        spec.length_mean
    } else {
        let shape = (spec.length_mean / spec.length_sd).powi(2);
        let scale = spec.length_sd * spec.length_sd / spec.length_mean;
        Gamma::new(shape, scale).expect("validated gamma parameters").sample(rng)
    };
    (raw.round() as usize).max(spec.length_min)
}

/// Generate a dataset from a spec. Pure function of the spec (including its seed).
pub fn generate_corpus(spec: &CorpusSpec) -> Result<Dataset> {
    spec.validate()?;
    let grammar = Grammar::build(spec)?;
    let mut ds = Dataset::new(spec.registry());
    let width = spec.n_docs.to_string().len().max(6);
    for i in 0..spec.n_docs {
        let mut rng = seed::rng(spec.seed, "corpus-doc", &[i as u64]);
        let labels: Vec<Label> = spec
            .tasks
            .iter()
            .map(|t| {
                let screened = rng.random::<f64>() < t.screening_rate;
                let positive = rng.random::<f64>() < t.event_rate;
                match (screened, positive) {
                    (false, _) => Label::Missing,
                    (true, true) => Label::Positive,
                    (true, false) => Label::Negative,
                }
            })
            .collect();

        let target = sample_length(spec, &mut rng);
        let mut clauses: Vec<Vec<String>> = Vec::new();
        let mut total = 0;
        while total < target {
            let mut c = grammar.clause(&mut rng);
            c.truncate(target - total);
            total += c.len();
            clauses.push(c);
        }
        for (t, task) in spec.tasks.iter().enumerate() {
            let draw = rng.random::<f64>();
            if labels[t].is_positive() && draw < task.signal_strength {
                let pool = &grammar.signals[t];
                let token = pool[rng.random_range(0..pool.len())].clone();
                let c = rng.random_range(0..clauses.len());
                clauses[c].push(token);
            }
        }
        // Procedure order within a note carries no meaning.
        clauses.shuffle(&mut rng);
        let text = clauses.concat().join(" ");
        ds.notes.push(ClinicalNote { id: format!("{}-{:0width$}", spec.id_prefix, i), text, labels });
    }
    Ok(ds)
}

/// Names of the default tasks paired with their designated signal tokens.
pub fn signal_tokens(spec: &CorpusSpec) -> Result<Vec<(String, Vec<String>)>> {
    let g = Grammar::build(spec)?;
    Ok(spec.tasks.iter().map(|t| t.name.clone()).zip(g.signals).collect())
}
