//! Keyword-signal corpus generator for end-to-end checks. Each document is a
//! run of shared noise words with a few keywords of its class dropped in.

use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::format_dataset;
use crate::rng::{stream, Stream};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub keywords_per_class: usize,
    pub noise_vocab: usize,
    /// Inclusive range of noise words per document.
    pub noise_words: (usize, usize),
    /// Inclusive range of class keywords per document.
    pub keywords: (usize, usize),
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        SyntheticSpec {
            classes: 4,
            keywords_per_class: 5,
            noise_vocab: 200,
            noise_words: (10, 20),
            keywords: (1, 2),
            train: 2000,
            dev: 400,
            test: 400,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticCorpus {
    pub train: Vec<(usize, String)>,
    pub dev: Vec<(usize, String)>,
    pub test: Vec<(usize, String)>,
}

pub fn keyword(class: usize, k: usize) -> String {
    format!("key{class}x{k}")
}

fn noise(j: usize) -> String {
    format!("noise{j}")
}

impl SyntheticSpec {
    /// Labels cycle through the classes so every split is balanced.
    pub fn generate(&self) -> SyntheticCorpus {
        let mut rng = stream(self.seed, Stream::Data);
        let mut split = |n: usize| -> Vec<(usize, String)> {
            let mut docs: Vec<(usize, String)> = (0..n)
                .map(|i| {
                    let label = i % self.classes;
                    let len = rng.gen_range(self.noise_words.0..=self.noise_words.1);
                    let mut words: Vec<String> = (0..len).map(|_| noise(rng.gen_range(0..self.noise_vocab))).collect();
                    for _ in 0..rng.gen_range(self.keywords.0..=self.keywords.1) {
                        let at = rng.gen_range(0..=words.len());
                        words.insert(at, keyword(label, rng.gen_range(0..self.keywords_per_class)));
                    }
                    (label, words.join(" "))
                })
                .collect();
            docs.shuffle(&mut rng);
            docs
        };
        let train = split(self.train);
        let dev = split(self.dev);
        let test = split(self.test);
        SyntheticCorpus { train, dev, test }
    }
}

impl SyntheticCorpus {
    /// Writes `train.tsv`, `dev.tsv` and `test.tsv`; returns their paths in that order.
    pub fn write(&self, dir: &Path) -> std::io::Result<[PathBuf; 3]> {
        fs::create_dir_all(dir)?;
        let paths = [dir.join("train.tsv"), dir.join("dev.tsv"), dir.join("test.tsv")];
        for (path, docs) in paths.iter().zip([&self.train, &self.dev, &self.test]) {
            fs::write(path, format_dataset(docs))?;
        }
        Ok(paths)
    }
}
