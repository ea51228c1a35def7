//! Synthetic persuadee worlds for offline runs.
//!
//! Each user owns a few attribute tokens. A handful of their records mention
//! one attribute (the record "leaks" it); the rest are filler. Delta comments
//! target the user's attributes and non-delta comments target other users'
//! attributes, so an oracle predictor can only say yes to a delta comment when
//! its context reveals the targeted attribute.

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::corpus::{CommentLabel, Source, UserRecord};
use crate::gateway::oracle::{OracleComment, OracleRecord, OracleSampling, OracleUser, OracleWorld};
use crate::pipeline::io::{write_json, write_jsonl};
use crate::seed::{self, Key};

const FILLER: &[&str] = &[
    "garden", "weather", "coffee", "bicycle", "weekend", "concert", "kitchen", "painting", "window", "station",
    "library", "cousin", "holiday", "lunch", "market", "sunset", "mountain", "river", "puzzle", "camera",
    "guitar", "jacket", "ticket", "office", "pencil", "bakery", "harbor", "meadow", "bridge", "lantern",
    "pillow", "blanket", "marble", "orchard", "tunnel", "violin", "basket", "carpet", "engine", "feather",
    "island", "jungle", "kettle", "ladder", "magnet", "napkin", "oyster", "parcel", "quilt", "rocket",
    "saddle", "teapot", "umbrella", "valley", "wagon", "yogurt", "zipper", "anchor", "button", "candle",
    "dinner", "elbow", "forest", "glove", "hammer", "insect", "jigsaw", "kitten", "lemon", "mirror",
    "noodle", "onion", "pepper", "rabbit", "salad", "tomato", "violet", "walnut", "yellow", "almond",
];

const SYLLABLES: &[&str] = &[
    "zor", "bla", "quen", "vik", "trel", "mox", "fen", "drav", "plin", "skor", "yul", "gax", "threm", "wob", "kri",
    "zan", "vosh", "plex", "brun", "tiv",
];

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SynthParams {
    pub users: usize,
    pub records_per_user: usize,
    pub attributes_per_user: usize,
    pub leaking_records_per_user: usize,
    /// How many times a leaking record repeats its attribute token.
    pub leak_repeat: usize,
    pub delta_comments: usize,
    pub other_comments: usize,
    pub sampling: OracleSampling,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            users: 10,
            records_per_user: 50,
            attributes_per_user: 1,
            leaking_records_per_user: 3,
            leak_repeat: 2,
            delta_comments: 3,
            other_comments: 3,
            sampling: OracleSampling { dropout: 0.25, noise: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ThreadLine {
    pub instance_id: String,
    pub user_id: String,
    pub post_text: String,
    pub post_created_at: i64,
    pub comments: Vec<CommentLabel>,
}

#[derive(Debug, Clone)]
pub struct SynthWorld {
    pub threads: Vec<ThreadLine>,
    pub histories: Vec<UserRecord>,
    pub world: OracleWorld,
}

impl SynthWorld {
    /// Writes `threads.jsonl`, `histories.jsonl` and `world.json` into `dir`.
    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        write_jsonl(&dir.join("threads.jsonl"), &self.threads)?;
        write_jsonl(&dir.join("histories.jsonl"), &self.histories)?;
        write_json(&dir.join("world.json"), &self.world)
    }

    /// Record ids that leak an attribute.
    pub fn leaking_records(&self) -> BTreeSet<&str> {
        self.world.records.iter().filter(|(_, r)| !r.leaks.is_empty()).map(|(id, _)| id.as_str()).collect()
    }
}

fn attribute_tokens(n: usize, rng: &mut ChaCha8Rng) -> Vec<String> {
    let mut seen = BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let w: String = (0..3).map(|_| *SYLLABLES.choose(rng).expect("non-empty")).collect();
        if seen.insert(w.clone()) {
            out.push(w);
        }
    }
    out
}

fn filler(rng: &mut ChaCha8Rng, words: usize) -> String {
    (0..words).map(|_| *FILLER.choose(rng).expect("non-empty")).collect::<Vec<_>>().join(" ")
}

pub fn generate(params: &SynthParams, seed: u64) -> SynthWorld {
    let p = params;
    assert!(p.leaking_records_per_user <= p.records_per_user, "more leaking records than records");
    assert!(p.attributes_per_user > 0 && p.users > 0, "need at least one user and attribute");
    let mut rng = seed::rng(seed, &[Key::Str("synth")]);
    let vocab = attribute_tokens(p.users * p.attributes_per_user, &mut rng);

    let mut users = BTreeMap::new();
    let mut records = BTreeMap::new();
    let mut comments = BTreeMap::new();
    let mut threads = Vec::new();
    let mut histories = Vec::new();

    for u in 0..p.users {
        let user_id = format!("u{u:03}");
        let attrs: Vec<String> = vocab[u * p.attributes_per_user..(u + 1) * p.attributes_per_user].to_vec();
        let others: Vec<&String> = vocab.iter().filter(|a| !attrs.contains(a)).collect();

        let mut slots: Vec<usize> = (0..p.records_per_user).collect();
        slots.shuffle(&mut rng);
        let leaking: BTreeMap<usize, &String> =
            slots[..p.leaking_records_per_user].iter().enumerate().map(|(i, &s)| (s, &attrs[i % attrs.len()])).collect();

        for j in 0..p.records_per_user {
            let record_id = format!("{user_id}-r{j:03}");
            let (text, leaks) = match leaking.get(&j) {
                Some(a) => {
                    let mut words = vec![a.as_str(); p.leak_repeat.max(1)];
                    let f = filler(&mut rng, 1);
                    words.push(&f);
                    (words.join(" "), vec![(*a).clone()])
                }
                None => {
                    let n = rng.gen_range(2..=4);
                    (filler(&mut rng, n), Vec::new())
                }
            };
            histories.push(UserRecord {
                record_id: record_id.clone(),
                author_id: user_id.clone(),
                text: format!("{text} {}", u * p.records_per_user + j),
                created_at: 1_000 + 10 * j as i64,
                source: if j % 3 == 0 { Source::Cmv } else { Source::OtherSubreddit },
            });
            records.insert(record_id, OracleRecord { leaks });
        }

        let instance_id = format!("t{u:03}");
        let mut thread_comments = Vec::new();
        let mut targets = attrs.clone();
        targets.shuffle(&mut rng);
        for c in 0..p.delta_comments {
            let target = &targets[c % targets.len()];
            let comment_id = format!("{instance_id}-d{c}");
            thread_comments.push(CommentLabel {
                comment_id: comment_id.clone(),
                text: format!("Have you weighed {target} here? {} {comment_id}", filler(&mut rng, 2)),
                label: 1,
            });
            comments.insert(comment_id, OracleComment { targets: vec![target.clone()], label: 1 });
        }
        for c in 0..p.other_comments {
            let target = others.choose(&mut rng).map(|s| s.to_string());
            let comment_id = format!("{instance_id}-n{c}");
            let text = match &target {
                Some(t) => format!("Think about {t} instead. {} {comment_id}", filler(&mut rng, 2)),
                None => format!("I disagree. {} {comment_id}", filler(&mut rng, 2)),
            };
            thread_comments.push(CommentLabel { comment_id: comment_id.clone(), text, label: 0 });
            comments.insert(comment_id, OracleComment { targets: target.into_iter().collect(), label: 0 });
        }
        thread_comments.shuffle(&mut rng);
        threads.push(ThreadLine {
            instance_id,
            user_id: user_id.clone(),
            post_text: format!("CMV: the {} debate is settled for {user_id}", filler(&mut rng, 2)),
            post_created_at: 1_000 + 10 * p.records_per_user as i64 + 100,
            comments: thread_comments,
        });
        users.insert(user_id, OracleUser { attributes: attrs });
    }

    SynthWorld { threads, histories, world: OracleWorld { users, records, comments, sampling: p.sampling } }
}

/// A run config for a synthetic world written to the same directory, with
/// every role served by the oracle.
pub fn sample_config(seed: u64) -> String {
    format!(
        r#"seed = {seed}
output_dir = "out"

[corpus]
threads = "threads.jsonl"
histories = "histories.jsonl"
split_ratios = [0.6, 0.2, 0.2]

[retrieval]
strategy = "generated"

[backends.default]
kind = "oracle"
model_name = "oracle"
world = "world.json"

[backends.querygen]
kind = "oracle"
model_name = "oracle-querygen"
world = "world.json"
trained = true
"#
    )
}
