//! Staged experiment runner. Every stage reads its inputs from the run directory, writes its
//! outputs there, and records a manifest with the hash of the config sections it used and the
//! digests of everything it wrote. Downstream stages refuse to run on missing or stale inputs.

mod config;
mod manifest;

use std::collections::{BTreeMap, HashMap};
use std::fmt::{self, Write as _};
use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::decode::{decode_record, read_decode_file, render_decode_file};
use crate::error::{GenRecError, Result};
use crate::eval::{build_eval_records, eval_pages, evaluate};
use crate::model::{load_checkpoint, save_checkpoint, Model};
use crate::rl::train_rl;
use crate::rng::derive_seed;
use crate::sft::{train_sft, SftConfig};
use crate::tokenizer::{
    build_trie, encode_catalog, fit_rq_kmeans, read_catalog_sids, read_codebook, write_catalog_sids, write_codebook,
    Codebook, SidTrie,
};
use crate::world::{
    build_training_examples, heldout_users, read_catalog, read_embeddings, read_examples, read_sessions, read_users,
    simulate_sessions, write_catalog, write_embeddings, write_examples, write_sessions, write_users, Catalog,
    SidExample, SidOracle, UserId, UserProfile, World,
};

pub use config::{
    ArmsConfig, ModelArm, ModelSettings, PipelineConfig, RlArm, SftArm, SplitConfig, TokenizerSettings,
};
pub use manifest::{digest_bytes, digest_file, digest_json, manifest_path, StageManifest};

const CATALOG: &str = "data/catalog.tsv";
const EMBEDDINGS: &str = "data/embeddings.tsv";
const USERS: &str = "data/users.tsv";
const SESSIONS: &str = "data/sessions.tsv";
const HELDOUT_USERS: &str = "data/heldout_users.txt";
const CODEBOOK: &str = "tokenizer/codebook.bin";
const CATALOG_SIDS: &str = "tokenizer/catalog_sids.tsv";
const TRAIN_EXAMPLES: &str = "data/train.tsv";
const HELDOUT_EXAMPLES: &str = "data/heldout.tsv";
const REPORT_JSON: &str = "report.json";
const REPORT_MD: &str = "report.md";
pub const RESOLVED_CONFIG: &str = "config.resolved.json";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    GenData,
    FitTokenizer,
    Tokenize,
    TrainSft(SftArm),
    TrainRl(RlArm),
    Decode(ModelArm),
    Eval(ModelArm),
    Report,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::GenData => f.write_str("gen-data"),
            Self::FitTokenizer => f.write_str("fit-tokenizer"),
            Self::Tokenize => f.write_str("tokenize"),
            Self::TrainSft(a) => write!(f, "train-sft/{a}"),
            Self::TrainRl(a) => write!(f, "train-rl/{a}"),
            Self::Decode(m) => write!(f, "decode/{m}"),
            Self::Eval(m) => write!(f, "eval/{m}"),
            Self::Report => f.write_str("report"),
        }
    }
}

impl FromStr for Stage {
    type Err = GenRecError;

    fn from_str(s: &str) -> Result<Self> {
        let (head, arm) = match s.split_once('/') {
            Some((h, a)) => (h, Some(a)),
            None => (s, None),
        };
        let need = || arm.ok_or_else(|| GenRecError::InvalidConfig(format!("stage `{head}` needs an arm")));
        Ok(match head {
            "gen-data" => Self::GenData,
            "fit-tokenizer" => Self::FitTokenizer,
            "tokenize" => Self::Tokenize,
            "train-sft" => Self::TrainSft(need()?.parse()?),
            "train-rl" => Self::TrainRl(need()?.parse()?),
            "decode" => Self::Decode(need()?.parse()?),
            "eval" => Self::Eval(need()?.parse()?),
            "report" => Self::Report,
            other => return Err(GenRecError::InvalidConfig(format!("unknown stage `{other}`"))),
        })
    }
}

fn training_stage(model: ModelArm) -> Stage {
    match model {
        ModelArm::Sft(a) => Stage::TrainSft(a),
        ModelArm::Rl(a) => Stage::TrainRl(a),
    }
}

fn model_dir(model: ModelArm) -> String {
    format!("models/{model}")
}

fn checkpoint_path(model: ModelArm) -> String {
    format!("{}/model.ckpt", model_dir(model))
}

fn decode_path(model: ModelArm) -> String {
    format!("decode/{model}.tsv")
}

fn eval_path(model: ModelArm) -> String {
    format!("eval/{model}.json")
}

/// Metrics for one model plus where they came from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub model: String,
    pub records: usize,
    pub metrics: BTreeMap<String, f64>,
    pub config_hash: String,
    /// Digest of the tokenize manifest: every report in one comparison must share it.
    pub data_lineage: String,
    pub inputs: BTreeMap<String, String>,
}

/// World files and tokenizer artifacts the oracle scorers need.
struct OracleParts {
    catalog: Catalog,
    users: Vec<UserProfile>,
    codebook: Codebook,
    trie: SidTrie,
}

pub struct Pipeline {
    config: PipelineConfig,
    out: PathBuf,
}

impl Pipeline {
    /// Validates the config, creates the run directory and writes the resolved config into it.
    pub fn new(config: PipelineConfig) -> Result<Self> {
        config.validate()?;
        let out = config.out_dir.clone();
        std::fs::create_dir_all(&out)?;
        let mut text = serde_json::to_string_pretty(&config)?;
        text.push('\n');
        std::fs::write(out.join(RESOLVED_CONFIG), text)?;
        Ok(Self { config, out })
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    fn seed(&self, labels: &[&str]) -> u64 {
        derive_seed(self.config.seed, labels)
    }

    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Stages whose outputs this stage reads directly.
    pub fn dependencies(&self, stage: Stage) -> Result<Vec<Stage>> {
        Ok(match stage {
            Stage::GenData => vec![],
            Stage::FitTokenizer => vec![Stage::GenData],
            Stage::Tokenize => vec![Stage::GenData, Stage::FitTokenizer],
            Stage::TrainSft(_) => vec![Stage::Tokenize],
            Stage::TrainRl(_) => vec![
                Stage::GenData,
                Stage::Tokenize,
                Stage::TrainSft(self.config.arms.rl_from.parse()?),
            ],
            Stage::Decode(m) => vec![Stage::Tokenize, training_stage(m)],
            Stage::Eval(m) => vec![Stage::GenData, Stage::Tokenize, Stage::Decode(m)],
            Stage::Report => self.report_models()?.into_iter().map(Stage::Eval).collect(),
        })
    }

    /// Hash of the seed and the config sections a stage reads.
    pub fn config_hash(&self, stage: Stage) -> Result<String> {
        let c = &self.config;
        let sections = match stage {
            Stage::GenData => json!({ "world": c.world, "split": c.split }),
            Stage::FitTokenizer => json!({ "tokenizer": c.tokenizer }),
            Stage::Tokenize => json!({}),
            Stage::TrainSft(_) => json!({ "model": c.model, "sft": c.sft }),
            Stage::TrainRl(_) => json!({ "rl": c.rl, "from": c.arms.rl_from }),
            Stage::Decode(_) => json!({ "beam_width": c.eval.beam_width, "constrained": c.eval.constrained }),
            Stage::Eval(_) => json!({ "ks": c.eval.ks, "preference": c.world.preference_model() }),
            Stage::Report => json!({ "arms": c.arms }),
        };
        digest_json(&json!({ "stage": stage.to_string(), "seed": c.seed, "config": sections }))
    }

    /// Walks every ancestor of `stage`: each must have run under the current config, its
    /// outputs must be intact, and the upstream manifests it recorded must be the ones on
    /// disk now. Returns the manifest digests of the direct dependencies.
    fn check_upstream(&self, stage: Stage) -> Result<BTreeMap<String, String>> {
        let mut direct = BTreeMap::new();
        for dep in self.dependencies(stage)? {
            if !manifest_path(&self.out, &dep.to_string()).exists() {
                let missing = self.first_missing(dep)?;
                let path = manifest_path(&self.out, &missing.to_string());
                return Err(GenRecError::MissingArtifact {
                    stage: missing.to_string(),
                    path,
                });
            }
            self.check_stage(dep)?;
            direct.insert(dep.to_string(), digest_file(&manifest_path(&self.out, &dep.to_string()))?);
        }
        Ok(direct)
    }

    /// Earliest stage on the way to `stage` that has never run.
    fn first_missing(&self, stage: Stage) -> Result<Stage> {
        for dep in self.dependencies(stage)? {
            if !manifest_path(&self.out, &dep.to_string()).exists() {
                return self.first_missing(dep);
            }
        }
        Ok(stage)
    }

    fn check_stage(&self, stage: Stage) -> Result<()> {
        let key = stage.to_string();
        let m = StageManifest::read(&self.out, &key)?;
        if m.config_hash != self.config_hash(stage)? {
            return Err(GenRecError::StalePipeline(format!(
                "stage `{key}` ran with a different configuration; re-run it"
            )));
        }
        m.verify_outputs(&self.out)?;
        for dep in self.dependencies(stage)? {
            let dep_key = dep.to_string();
            let path = manifest_path(&self.out, &dep_key);
            let recorded = m.upstream.get(&dep_key);
            if !path.exists() {
                return Err(GenRecError::MissingArtifact { stage: dep_key, path });
            }
            if recorded != Some(&digest_file(&path)?) {
                return Err(GenRecError::StalePipeline(format!(
                    "stage `{key}` was built from an older `{dep_key}`; re-run it"
                )));
            }
            self.check_stage(dep)?;
        }
        Ok(())
    }

    fn write(&self, outputs: &mut BTreeMap<String, String>, rel: &str, bytes: &[u8]) -> Result<()> {
        let path = self.path(rel);
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        std::fs::write(&path, bytes)?;
        outputs.insert(rel.to_string(), digest_bytes(bytes));
        Ok(())
    }

    fn reader(&self, rel: &str) -> Result<BufReader<File>> {
        Ok(BufReader::new(File::open(self.path(rel))?))
    }

    fn examples(&self, rel: &str) -> Result<Vec<SidExample>> {
        read_examples(self.reader(rel)?)
    }

    fn oracle_parts(&self) -> Result<OracleParts> {
        let catalog = read_catalog(self.reader(CATALOG)?)?;
        let users = read_users(self.reader(USERS)?)?;
        let codebook = read_codebook(self.reader(CODEBOOK)?)?;
        let pairs = read_catalog_sids(self.reader(CATALOG_SIDS)?)?;
        let trie = build_trie(&codebook, &pairs)?;
        Ok(OracleParts {
            catalog,
            users,
            codebook,
            trie,
        })
    }

    fn oracle<'a>(&self, parts: &'a OracleParts) -> SidOracle<'a> {
        SidOracle {
            catalog: &parts.catalog,
            trie: &parts.trie,
            codebook: &parts.codebook,
            model: self.config.world.preference_model(),
        }
    }

    /// Runs one stage after checking its inputs, then records its manifest.
    pub fn run(&self, stage: Stage) -> Result<()> {
        let upstream = self.check_upstream(stage)?;
        let config_hash = self.config_hash(stage)?;
        let mut outputs = BTreeMap::new();
        let lineage = || digest_file(&manifest_path(&self.out, &Stage::Tokenize.to_string()));
        match stage {
            Stage::GenData => self.gen_data(&mut outputs)?,
            Stage::FitTokenizer => self.fit_tokenizer(&config_hash, &mut outputs)?,
            Stage::Tokenize => self.tokenize(&mut outputs)?,
            Stage::TrainSft(arm) => self.train_sft(arm, &config_hash, &upstream, &mut outputs)?,
            Stage::TrainRl(arm) => self.train_rl(arm, &config_hash, &upstream, &mut outputs)?,
            Stage::Decode(m) => self.decode(m, &mut outputs)?,
            Stage::Eval(m) => self.eval(m, &config_hash, lineage()?, &mut outputs)?,
            Stage::Report => self.report(&config_hash, &mut outputs)?,
        }
        StageManifest {
            stage: stage.to_string(),
            config_hash,
            upstream,
            outputs,
        }
        .write(&self.out)
    }

    /// Stages `all` runs, in order.
    pub fn plan(&self) -> Result<Vec<Stage>> {
        let arms = &self.config.arms;
        let mut sft: Vec<SftArm> = arms.sft.iter().map(|a| a.parse()).collect::<Result<_>>()?;
        let from: SftArm = arms.rl_from.parse()?;
        let rl: Vec<RlArm> = arms.rl.iter().map(|a| a.parse()).collect::<Result<_>>()?;
        if !rl.is_empty() && !sft.contains(&from) {
            sft.push(from);
        }
        let mut plan = vec![Stage::GenData, Stage::FitTokenizer, Stage::Tokenize];
        plan.extend(sft.iter().map(|&a| Stage::TrainSft(a)));
        plan.extend(rl.iter().map(|&a| Stage::TrainRl(a)));
        for m in self.report_models()? {
            plan.push(Stage::Decode(m));
            plan.push(Stage::Eval(m));
        }
        plan.push(Stage::Report);
        Ok(plan)
    }

    pub fn run_all(&self) -> Result<()> {
        for stage in self.plan()? {
            self.run(stage)?;
        }
        Ok(())
    }

    /// Models compared by `report`: the configured SFT arms, then the RL arms.
    fn report_models(&self) -> Result<Vec<ModelArm>> {
        let arms = &self.config.arms;
        arms.sft
            .iter()
            .chain(&arms.rl)
            .map(|a| a.parse())
            .collect::<Result<Vec<ModelArm>>>()
    }

    fn gen_data(&self, outputs: &mut BTreeMap<String, String>) -> Result<()> {
        let cfg = &self.config.world;
        let seed = self.seed(&["gen-data"]);
        let world = World::generate(cfg, seed)?;
        let sessions = simulate_sessions(&world, seed)?;
        let heldout = heldout_users(
            world.users.iter().map(|u| u.user_id),
            self.config.split.heldout_fraction,
            self.seed(&["split"]),
        );
        let mut buf = Vec::new();
        write_catalog(&world.catalog, &mut buf)?;
        self.write(outputs, CATALOG, &buf)?;
        buf.clear();
        write_embeddings(&world.catalog.embeddings(), &mut buf)?;
        self.write(outputs, EMBEDDINGS, &buf)?;
        buf.clear();
        write_users(&world.users, &mut buf)?;
        self.write(outputs, USERS, &buf)?;
        buf.clear();
        write_sessions(&sessions, &mut buf)?;
        self.write(outputs, SESSIONS, &buf)?;
        let ids: String = heldout.iter().map(|u| format!("{u}\n")).collect();
        self.write(outputs, HELDOUT_USERS, ids.as_bytes())
    }

    fn fit_tokenizer(&self, config_hash: &str, outputs: &mut BTreeMap<String, String>) -> Result<()> {
        let embeddings = read_embeddings(self.reader(EMBEDDINGS)?)?;
        let rq = self.config.tokenizer.with_seed(self.seed(&["fit-tokenizer"]));
        let mut codebook = fit_rq_kmeans(&embeddings, &rq)?;
        codebook.fit_meta.config_hash = Some(config_hash.to_string());
        let mut buf = Vec::new();
        write_codebook(&codebook, &mut buf)?;
        self.write(outputs, CODEBOOK, &buf)
    }

    fn tokenize(&self, outputs: &mut BTreeMap<String, String>) -> Result<()> {
        let embeddings = read_embeddings(self.reader(EMBEDDINGS)?)?;
        let codebook = read_codebook(self.reader(CODEBOOK)?)?;
        let pairs = encode_catalog(&codebook, &embeddings)?;
        let sessions = read_sessions(self.reader(SESSIONS)?)?;
        let heldout: Vec<UserId> = std::fs::read_to_string(self.path(HELDOUT_USERS))?
            .lines()
            .map(|l| {
                l.parse()
                    .map_err(|e| GenRecError::Format(format!("bad held-out user `{l}`: {e}")))
            })
            .collect::<Result<_>>()?;
        let sid_of: HashMap<_, _> = pairs.iter().cloned().collect();
        let examples = build_training_examples(&sessions, &sid_of, self.config.world.exposure_cap)?;
        let (test, train): (Vec<_>, Vec<_>) = examples.iter().map(|e| &e.sids).partition(|e| heldout.contains(&e.user_id));
        let mut buf = Vec::new();
        write_catalog_sids(&pairs, &mut buf)?;
        self.write(outputs, CATALOG_SIDS, &buf)?;
        buf.clear();
        write_examples(train, &mut buf)?;
        self.write(outputs, TRAIN_EXAMPLES, &buf)?;
        buf.clear();
        write_examples(test, &mut buf)?;
        self.write(outputs, HELDOUT_EXAMPLES, &buf)
    }

    fn checkpoint_meta(&self, stage: Stage, config_hash: &str, upstream: &BTreeMap<String, String>) -> serde_json::Value {
        json!({ "stage": stage.to_string(), "config_hash": config_hash, "upstream": upstream })
    }

    fn save_model(&self, outputs: &mut BTreeMap<String, String>, arm: ModelArm, model: &Model<f32>, meta: &serde_json::Value) -> Result<()> {
        let rel = checkpoint_path(arm);
        let path = self.path(&rel);
        std::fs::create_dir_all(self.path(&model_dir(arm)))?;
        save_checkpoint(&path, model, meta)?;
        outputs.insert(rel, digest_file(&path)?);
        Ok(())
    }

    fn train_sft(
        &self,
        arm: SftArm,
        config_hash: &str,
        upstream: &BTreeMap<String, String>,
        outputs: &mut BTreeMap<String, String>,
    ) -> Result<()> {
        let codebook = read_codebook(self.reader(CODEBOOK)?)?;
        let train = self.examples(TRAIN_EXAMPLES)?;
        let heldout = self.examples(HELDOUT_EXAMPLES)?;
        let mc = self
            .config
            .model_config(codebook.level_sizes(), arm.merger, self.seed(&["train-sft", "init"]));
        let mut model = Model::<f32>::init(mc)?;
        let sft = SftConfig {
            mode: arm.mode,
            ..self.config.sft.clone()
        };
        let report = train_sft(&mut model, &train, &heldout, &sft, self.seed(&["train-sft", "shuffle"]))?;
        let meta = self.checkpoint_meta(Stage::TrainSft(arm), config_hash, upstream);
        self.save_model(outputs, ModelArm::Sft(arm), &model, &meta)?;
        let rel = format!("{}/metrics.tsv", model_dir(ModelArm::Sft(arm)));
        self.write(outputs, &rel, report.log.render().as_bytes())
    }

    fn train_rl(
        &self,
        arm: RlArm,
        config_hash: &str,
        upstream: &BTreeMap<String, String>,
        outputs: &mut BTreeMap<String, String>,
    ) -> Result<()> {
        let from: SftArm = self.config.arms.rl_from.parse()?;
        let (mut model, _) = load_checkpoint(&self.path(&checkpoint_path(ModelArm::Sft(from))))?;
        let parts = self.oracle_parts()?;
        let train = self.examples(TRAIN_EXAMPLES)?;
        let rl = arm.apply(&self.config.rl);
        let report = train_rl(
            &mut model,
            &train,
            &parts.users,
            &self.oracle(&parts),
            &rl,
            self.seed(&["train-rl"]),
        )?;
        let meta = self.checkpoint_meta(Stage::TrainRl(arm), config_hash, upstream);
        self.save_model(outputs, ModelArm::Rl(arm), &model, &meta)?;
        let rel = format!("{}/rewards.tsv", model_dir(ModelArm::Rl(arm)));
        self.write(outputs, &rel, report.render_reward_log().as_bytes())
    }

    fn decode(&self, model_arm: ModelArm, outputs: &mut BTreeMap<String, String>) -> Result<()> {
        let (model, _) = load_checkpoint(&self.path(&checkpoint_path(model_arm)))?;
        let codebook = read_codebook(self.reader(CODEBOOK)?)?;
        let trie = build_trie(&codebook, &read_catalog_sids(self.reader(CATALOG_SIDS)?)?)?;
        let heldout = self.examples(HELDOUT_EXAMPLES)?;
        let eval = &self.config.eval;
        let records = eval_pages(&heldout)
            .into_iter()
            .map(|e| decode_record(&model, e.user_id, &e.prompt, eval.beam_width, eval.constrained, &trie))
            .collect::<Result<Vec<_>>>()?;
        self.write(outputs, &decode_path(model_arm), render_decode_file(&records).as_bytes())
    }

    fn eval(
        &self,
        model_arm: ModelArm,
        config_hash: &str,
        data_lineage: String,
        outputs: &mut BTreeMap<String, String>,
    ) -> Result<()> {
        let decode_rel = decode_path(model_arm);
        let decoded = read_decode_file(&self.path(&decode_rel))?;
        let heldout = self.examples(HELDOUT_EXAMPLES)?;
        let records = build_eval_records(&decoded, &heldout)?;
        let parts = self.oracle_parts()?;
        let metrics = evaluate(&records, &self.config.eval.ks, &self.oracle(&parts), &parts.users)?;
        let inputs = [decode_rel.as_str(), HELDOUT_EXAMPLES]
            .iter()
            .map(|rel| Ok((rel.to_string(), digest_file(&self.path(rel))?)))
            .collect::<Result<_>>()?;
        let report = EvalReport {
            model: model_arm.to_string(),
            records: records.len(),
            metrics,
            config_hash: config_hash.to_string(),
            data_lineage,
            inputs,
        };
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        self.write(outputs, &eval_path(model_arm), text.as_bytes())
    }

    /// Comparison table across the configured arms. All reports must descend from the same
    /// tokenized data.
    fn report(&self, config_hash: &str, outputs: &mut BTreeMap<String, String>) -> Result<()> {
        let models = self.report_models()?;
        let reports = models
            .iter()
            .map(|m| Ok(serde_json::from_str::<EvalReport>(&std::fs::read_to_string(self.path(&eval_path(*m)))?)?))
            .collect::<Result<Vec<_>>>()?;
        if let Some(first) = reports.first() {
            if let Some(other) = reports.iter().find(|r| r.data_lineage != first.data_lineage) {
                return Err(GenRecError::StalePipeline(format!(
                    "eval reports for `{}` and `{}` come from different data",
                    first.model, other.model
                )));
            }
        }
        let mut columns: Vec<String> = ["hr", "ndcg", "hr_any", "reward"]
            .iter()
            .flat_map(|m| self.config.eval.ks.iter().map(move |k| format!("{m}@{k}")))
            .collect();
        columns.push("har".into());
        let mut md = String::new();
        let _ = writeln!(md, "| model | records | {} |", columns.join(" | "));
        let _ = writeln!(md, "|---|---|{}", "---|".repeat(columns.len()));
        for r in &reports {
            let cells: Vec<String> = columns
                .iter()
                .map(|c| r.metrics.get(c).map_or("-".to_string(), |v| format!("{v:.4}")))
                .collect();
            let _ = writeln!(md, "| {} | {} | {} |", r.model, r.records, cells.join(" | "));
        }
        let table = json!({
            "config_hash": config_hash,
            "data_lineage": reports.first().map(|r| r.data_lineage.clone()),
            "models": reports.iter().map(|r| (r.model.clone(), &r.metrics)).collect::<BTreeMap<_, _>>(),
        });
        let mut text = serde_json::to_string_pretty(&table)?;
        text.push('\n');
        self.write(outputs, REPORT_JSON, text.as_bytes())?;
        self.write(outputs, REPORT_MD, md.as_bytes())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stage_keys_round_trip() {
        for key in [
            "gen-data",
            "fit-tokenizer",
            "tokenize",
            "train-sft/sft-pointwise",
            "train-rl/grpo-sr-nogate",
            "decode/sft-pagewise-nomerge",
            "eval/grpo",
            "report",
        ] {
            assert_eq!(key.parse::<Stage>().unwrap().to_string(), key);
        }
        assert!("train-sft".parse::<Stage>().is_err());
        assert!("serve".parse::<Stage>().is_err());
    }

    #[test]
    fn stage_hashes_track_only_their_sections() {
        let dir = tempfile::tempdir().unwrap();
        let base = PipelineConfig {
            out_dir: dir.path().to_path_buf(),
            ..PipelineConfig::default()
        };
        let a = Pipeline::new(base.clone()).unwrap();
        let b = Pipeline::new(base.with_overrides(&["sft.total_steps=11"]).unwrap()).unwrap();
        let sft = Stage::TrainSft("sft-pagewise".parse().unwrap());
        assert_eq!(a.config_hash(Stage::GenData).unwrap(), b.config_hash(Stage::GenData).unwrap());
        assert_ne!(a.config_hash(sft).unwrap(), b.config_hash(sft).unwrap());
        let c = Pipeline::new(base.with_overrides(&["seed=9"]).unwrap()).unwrap();
        assert_ne!(a.config_hash(Stage::GenData).unwrap(), c.config_hash(Stage::GenData).unwrap());
    }
}
