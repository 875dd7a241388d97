//! The modular prefix-sum task.
//!
//! A question is `n` uniform tokens over `{0..v-1}` and its answer is their
//! sum mod `v`. The running prefix sums form a rationale that makes the answer
//! a direct read-off of the last token.
//!
//! On disk a split is stored as
//!
//! ```text
//! femlab-data v=<v> n=<n>
//! 3,4,1,0|3
//! ...
//! ```
//!
//! and a dataset directory holds `train.data` and `test.data`.

use std::fmt::Write as _;
use std::path::Path;

use rand::Rng;

use crate::error::{contract, Error, Result};
use crate::rng::{stream, Domain};
use crate::seqmodel::{Answer, Question, TaskShape};

pub const TRAIN_FILE: &str = "train.data";
pub const TEST_FILE: &str = "test.data";

const MAGIC: &str = "femlab-data";

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Datapoint {
    pub x: Question,
    pub y_star: Answer,
}

impl Datapoint {
    /// Builds a datapoint, deriving the answer from the question.
    pub fn from_question(x: Question, vocab: usize) -> Self {
        let y_star = true_answer(&x, vocab);
        Self { x, y_star }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Dataset {
    pub train: Vec<Datapoint>,
    pub test: Vec<Datapoint>,
    /// Generation seed, when known.
    pub seed: Option<u64>,
}

pub fn true_answer(x: &Question, vocab: usize) -> Answer {
    Answer(x.0.iter().sum::<usize>() % vocab)
}

/// Binary reward `1[ŷ = y*]`.
#[inline]
pub fn reward(y_hat: Answer, y_star: Answer) -> u8 {
    u8::from(y_hat == y_star)
}

fn draw_split(shape: &TaskShape, count: usize, seed: u64, lane: u64) -> Vec<Datapoint> {
    let mut rng = stream(seed, Domain::Data, 0, lane);
    (0..count)
        .map(|_| {
            let x = Question(
                (0..shape.question_len)
                    .map(|_| rng.gen_range(0..shape.vocab))
                    .collect(),
            );
            Datapoint::from_question(x, shape.vocab)
        })
        .collect()
}

/// Uniform questions for both splits, each split on its own random lane.
pub fn generate_dataset(shape: &TaskShape, n_train: usize, n_test: usize, seed: u64) -> Result<Dataset> {
    shape.validate()?;
    if n_train == 0 || n_test == 0 {
        return Err(contract("train and test sizes must be at least 1"));
    }
    Ok(Dataset {
        train: draw_split(shape, n_train, seed, 0),
        test: draw_split(shape, n_test, seed, 1),
        seed: Some(seed),
    })
}

pub fn render_split(vocab: usize, question_len: usize, points: &[Datapoint]) -> String {
    let mut out = format!("{MAGIC} v={vocab} n={question_len}\n");
    for dp in points {
        for (i, t) in dp.x.0.iter().enumerate() {
            if i > 0 {
                out.push(',');
            }
            write!(out, "{t}").expect("writing to a String cannot fail");
        }
        writeln!(out, "|{}", dp.y_star.0).expect("writing to a String cannot fail");
    }
    out
}

/// A parsed split: `(vocab, question_len, datapoints)`.
pub type Split = (usize, usize, Vec<Datapoint>);

pub fn parse_split(text: &str, origin: &Path) -> Result<Split> {
    let err = |line: usize, message: String| Error::Parse {
        path: origin.to_path_buf(),
        line,
        message,
    };
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| err(1, "empty dataset file".into()))?;
    let mut fields = header.split(' ');
    if fields.next() != Some(MAGIC) {
        return Err(err(1, format!("expected header starting with `{MAGIC}`")));
    }
    let mut field = |key: &str| -> Result<usize> {
        let raw = fields
            .next()
            .and_then(|f| f.strip_prefix(key))
            .and_then(|f| f.strip_prefix('='))
            .ok_or_else(|| err(1, format!("missing `{key}=` field")))?;
        raw.parse().map_err(|_| err(1, format!("bad value for `{key}`: {raw}")))
    };
    let vocab = field("v")?;
    let question_len = field("n")?;
    if vocab < 2 || question_len < 1 {
        return Err(err(1, format!("invalid shape v={vocab} n={question_len}")));
    }

    let mut points = Vec::new();
    for (i, line) in lines.enumerate() {
        let lineno = i + 2;
        let (q, a) = line
            .split_once('|')
            .ok_or_else(|| err(lineno, "missing `|` separator".into()))?;
        let tokens = q
            .split(',')
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|_| err(lineno, format!("bad question tokens: {q:?}")))?;
        let y: usize = a
            .parse()
            .map_err(|_| err(lineno, format!("bad answer token: {a:?}")))?;
        if tokens.len() != question_len {
            return Err(err(lineno, format!("expected {question_len} question tokens, got {}", tokens.len())));
        }
        if tokens.iter().chain(std::iter::once(&y)).any(|&t| t >= vocab) {
            return Err(err(lineno, format!("token out of range for v={vocab}")));
        }
        let dp = Datapoint {
            x: Question(tokens),
            y_star: Answer(y),
        };
        if true_answer(&dp.x, vocab) != dp.y_star {
            return Err(err(lineno, "answer is not the question sum mod v".into()));
        }
        points.push(dp);
    }
    Ok((vocab, question_len, points))
}

pub fn read_split(path: &Path) -> Result<Split> {
    let text = std::fs::read_to_string(path)?;
    parse_split(&text, path)
}

pub fn write_dataset_dir(dir: &Path, shape: &TaskShape, data: &Dataset) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let (v, n) = (shape.vocab, shape.question_len);
    std::fs::write(dir.join(TRAIN_FILE), render_split(v, n, &data.train))?;
    std::fs::write(dir.join(TEST_FILE), render_split(v, n, &data.test))?;
    Ok(())
}

/// Reads `train.data` and `test.data`; returns `(vocab, question_len, dataset)`.
pub fn read_dataset_dir(dir: &Path) -> Result<(usize, usize, Dataset)> {
    let (v, n, train) = read_split(&dir.join(TRAIN_FILE))?;
    let (v2, n2, test) = read_split(&dir.join(TEST_FILE))?;
    if (v, n) != (v2, n2) {
        return Err(Error::ShapeMismatch(format!(
            "train split has v={v} n={n}, test split has v={v2} n={n2}"
        )));
    }
    Ok((
        v,
        n,
        Dataset {
            train,
            test,
            seed: None,
        },
    ))
}
