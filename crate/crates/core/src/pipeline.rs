//! End-to-end glue shared by the CLI, the ablation runner and the tests.

use crate::checkpoint::{config_hash, Checkpoint};
use crate::config::RunConfig;
use crate::data::{stratified_split, DatasetSplit, Fractions, Profile};
use crate::embedding::train_tokenizer;
use crate::eval::{compute_metrics, MetricReport};
use crate::model::Model;
use crate::tokenizer::Tokenizer;
use crate::train::{decisions, predict_set, train, EncodedSet, TrainOutcome};
use crate::Result;

/// A split plus the tokenizer fitted on its training part and all three
/// parts encoded onto the model grid.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub split: DatasetSplit,
    pub tokenizer: Tokenizer,
    pub train: EncodedSet,
    pub val: EncodedSet,
    pub test: EncodedSet,
}

pub fn split(profiles: &[Profile], cfg: &RunConfig) -> Result<DatasetSplit> {
    Ok(stratified_split(profiles, Fractions(cfg.data.fractions), cfg.data.split_seed)?)
}

/// Fits the tokenizer chosen by `cfg` on the training part only.
pub fn prepare_split(split: DatasetSplit, cfg: &RunConfig) -> Result<Prepared> {
    let tokenizer = train_tokenizer(cfg.tokenizer_kind(), &split.train, cfg.tokenizer.target_size)?;
    Ok(encode_split(split, tokenizer, cfg))
}

pub fn encode_split(split: DatasetSplit, tokenizer: Tokenizer, cfg: &RunConfig) -> Prepared {
    let grid = cfg.grid();
    Prepared {
        train: EncodedSet::encode(&split.train, &tokenizer, grid),
        val: EncodedSet::encode(&split.validation, &tokenizer, grid),
        test: EncodedSet::encode(&split.test, &tokenizer, grid),
        split,
        tokenizer,
    }
}

pub fn prepare(profiles: &[Profile], cfg: &RunConfig) -> Result<Prepared> {
    prepare_split(split(profiles, cfg)?, cfg)
}

/// Fresh model seeded with `cfg.train.seed`, trained on the prepared data.
pub fn train_model(cfg: &RunConfig, prepared: &Prepared) -> Result<TrainOutcome> {
    let model = Model::new(cfg.model_config(prepared.tokenizer.vocab_size()), cfg.train.seed)?;
    Ok(train(model, &prepared.train, &prepared.val, &cfg.train)?)
}

pub fn evaluate(model: &Model, set: &EncodedSet, batch_size: usize) -> Result<MetricReport> {
    let probs = predict_set(model, set, batch_size)?;
    Ok(compute_metrics(&decisions(&probs), &set.labels)?)
}

/// Hash a checkpoint trained under `cfg` must carry.
pub fn expected_hash(cfg: &RunConfig, vocab_size: usize) -> String {
    config_hash(&cfg.model_config(vocab_size), cfg.tokenizer_kind(), cfg.tokenizer.target_size)
}

pub fn checkpoint(cfg: &RunConfig, outcome: &TrainOutcome, tokenizer: &Tokenizer) -> Checkpoint {
    Checkpoint::new(outcome.best.clone(), tokenizer.clone(), cfg.tokenizer.target_size)
}
