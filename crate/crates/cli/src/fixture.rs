//! Synthetic corpus for smoke runs and the end-to-end test: subtitle files
//! with scene breaks, multi-line turns and the kinds of noise the cleaning
//! rules target, plus every side input the pipeline reads and a small config.

use std::path::{Path, PathBuf};

use empdial_core::classifier::LabelledSentence;
use empdial_core::corpus::LabelledPair;
use empdial_core::dialog::Dialog;
use empdial_core::records::write_jsonl;
use empdial_core::segment::Turn;
use empdial_core::subtitle::{write_cues, SubtitleLine};
use empdial_core::{LabelSet, Role};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::Result;

const NOUNS: [&str; 30] = [
    "letter", "dog", "party", "exam", "job", "house", "car", "garden", "wedding", "trip", "phone", "dinner", "concert",
    "game", "movie", "storm", "train", "meeting", "gift", "painting", "bridge", "river", "school", "hospital",
    "market", "kitchen", "window", "book", "song", "photo",
];

const EMOTION_TEMPLATES: [&str; 4] = [
    "I felt so {w} when I saw the {n}.",
    "Honestly I am {w} about the {n} tonight.",
    "We were all {w} after the {n} last week.",
    "It makes me {w} to think about the {n}.",
];

const NEUTRAL_TEMPLATES: [&str; 4] = [
    "The {n} is on the table near the door.",
    "We need to move the {n} before noon.",
    "He left the {n} in the car this morning.",
    "There is a {n} next to the station.",
];

fn intent_templates(intent: &str) -> &'static [&'static str] {
    match intent {
        "questioning" => &["What do you think about the {n}?", "Why did you bring the {n} here?"],
        "agreeing" => &["Yes you are right about the {n}.", "I agree the {n} was a good idea."],
        "acknowledging" => &["Okay I understand about the {n}.", "Right, I see what you mean about the {n}."],
        "sympathizing" => &["I am so sorry about the {n}.", "That must be hard with the {n}."],
        "encouraging" => &["You can do it with the {n}.", "Keep going, the {n} will work out."],
        "consoling" => &["It will be fine after the {n}.", "Do not worry, the {n} is not your fault."],
        "suggesting" => &["Maybe you should try the {n}.", "How about we fix the {n} together?"],
        "wishing" => &["Good luck with the {n}.", "I hope the {n} goes well for you."],
        _ => &NEUTRAL_TEMPLATES,
    }
}

/// A sentence expressing `label` under the default label set.
fn sentence(labels: &LabelSet, label: usize, rng: &mut ChaCha8Rng) -> String {
    let name = labels.name(label);
    let template = match labels.role(label) {
        Role::Emotion => *EMOTION_TEMPLATES.choose(rng).unwrap(),
        Role::Intent => *intent_templates(name).choose(rng).unwrap(),
        Role::Neutral => *NEUTRAL_TEMPLATES.choose(rng).unwrap(),
    };
    template.replace("{w}", name).replace("{n}", NOUNS.choose(rng).unwrap())
}

fn labels_of(labels: &LabelSet, role: Role) -> Vec<usize> {
    (0..labels.len()).filter(|&i| labels.role(i) == role).collect()
}

/// Label for one turn; emotional scenes lean on emotion labels, calm ones on
/// neutral statements.
fn pick_label(labels: &LabelSet, emotional: bool, rng: &mut ChaCha8Rng) -> usize {
    let r: f64 = rng.gen();
    let (emotion, intent) = if emotional { (0.6, 0.9) } else { (0.1, 0.3) };
    let role = if r < emotion {
        Role::Emotion
    } else if r < intent {
        Role::Intent
    } else {
        Role::Neutral
    };
    *labels_of(labels, role).choose(rng).unwrap()
}

/// Splits a sentence into a continuation line and a lowercase remainder.
fn split_line(text: &str) -> Option<(String, String)> {
    let words: Vec<&str> = text.split_whitespace().collect();
    if words.len() < 6 {
        return None;
    }
    let mid = words.len() / 2;
    let head = words[..mid].join(" ").trim_end_matches(',').to_string() + ",";
    let tail = words[mid..].join(" ");
    let mut chars = tail.chars();
    let first = chars.next()?;
    Some((head, first.to_lowercase().collect::<String>() + chars.as_str()))
}

struct Cursor {
    lines: Vec<SubtitleLine>,
    doc_id: String,
    clock: u64,
}

impl Cursor {
    fn cue(&mut self, text: String, gap_ms: u64, rng: &mut ChaCha8Rng) {
        let start = self.clock + gap_ms;
        let end = start + 800 + 60 * text.split_whitespace().count() as u64 + rng.gen_range(0..400);
        self.lines.push(SubtitleLine {
            doc_id: self.doc_id.clone(),
            index: self.lines.len(),
            start_ms: Some(start),
            end_ms: Some(end),
            text,
        });
        self.clock = end;
    }
}

fn subtitle_file(doc_id: &str, labels: &LabelSet, rng: &mut ChaCha8Rng) -> String {
    let mut c = Cursor {
        lines: Vec::new(),
        doc_id: doc_id.to_string(),
        clock: rng.gen_range(1_000..30_000),
    };
    if rng.gen_bool(0.3) {
        c.cue("Previously on The Harbour, nothing went right.".into(), 0, rng);
    }
    let scenes = rng.gen_range(3..=6);
    for scene in 0..scenes {
        let emotional = rng.gen_bool(0.5);
        let turns = rng.gen_range(3..=8);
        let mut previous = String::new();
        for t in 0..turns {
            let gap = if t == 0 && scene > 0 { rng.gen_range(6_000..=20_000) } else { rng.gen_range(400..=1_500) };
            let roll: f64 = rng.gen();
            let mut text = if roll < 0.04 {
                "#### !!! ***".to_string()
            } else if roll < 0.08 {
                "Yeah.".to_string()
            } else if roll < 0.12 && !previous.is_empty() {
                previous.clone()
            } else {
                sentence(labels, pick_label(labels, emotional, rng), rng)
            };
            previous = text.clone();
            if rng.gen_bool(0.1) {
                let who = ["MARY", "JOHN", "DR. HALE"].choose(rng).unwrap();
                text = format!("{who}: {text}");
            }
            match split_line(&text).filter(|_| rng.gen_bool(0.25)) {
                Some((head, tail)) => {
                    c.cue(head, gap, rng);
                    let short = rng.gen_range(60..=150);
                    c.cue(tail, short, rng);
                }
                None => c.cue(text, gap, rng),
            }
        }
    }
    write_cues(&c.lines)
}

fn line(text: &str, start: u64, end: u64) -> SubtitleLine {
    SubtitleLine {
        doc_id: "pairs".into(),
        index: 0,
        start_ms: Some(start),
        end_ms: Some(end),
        text: text.into(),
    }
}

fn segmenter_pairs(labels: &LabelSet, n: usize, rng: &mut ChaCha8Rng) -> Vec<LabelledPair> {
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let label = rng.gen_range(0..labels.len());
        let first = sentence(labels, label, rng);
        let end = 2_000;
        if out.len() % 2 == 0 {
            if let Some((head, tail)) = split_line(&first) {
                let start = end + rng.gen_range(40..=200);
                out.push(LabelledPair {
                    prev: line(&head, 0, end),
                    next: line(&tail, start, start + 1500),
                    same_turn: true,
                });
            }
        } else {
            let second = sentence(labels, rng.gen_range(0..labels.len()), rng);
            let start = end + rng.gen_range(300..=3_000);
            out.push(LabelledPair {
                prev: line(&first, 0, end),
                next: line(&second, start, start + 1500),
                same_turn: false,
            });
        }
    }
    out
}

fn ed_dialogs(labels: &LabelSet, n: usize, rng: &mut ChaCha8Rng) -> Vec<Dialog> {
    (0..n)
        .map(|i| Dialog {
            doc_id: format!("ed/{i:04}"),
            dialog_index: 0,
            turns: (0..4)
                .map(|_| Turn {
                    text: sentence(labels, pick_label(labels, true, rng), rng),
                    start_ms: None,
                    end_ms: None,
                })
                .collect(),
        })
        .collect()
}

const CONFIG: &str = r#"seed = {seed}

[paths]
corpus = "corpus"
segmenter_pairs = "segmenter_pairs.jsonl"
classifier_data = "classifier_train.jsonl"
intent_seeds = "intent_seeds.jsonl"
ed = "ed.jsonl"
work_dir = "work"

[lexicon]
n_min = 3
n_max = 3
top_per_intent = 4

[classifier]
hash_bits = 14
max_epochs = 20

[select]
k = 300

[tokenizer]
vocab_size = 400

[model]
num_layers = 1
num_heads = 2
d_model = 32
d_ff = 64
dropout = 0.1
max_input_tokens = 64
max_target_tokens = 24

[train]
dataset = "OSED"
learning_rate = 0.002
batch_size = 16
max_epochs = 4
patience = 2

[generation]
beam_size = 4
block_ngram = 4
max_length = 20

[evaluate]
per_set = 10
max_generate = 20
models = [{ name = "Ours", dir = "models" }]
"#;

/// Writes the fixture under `dir` and returns the path of its config.
pub fn write_fixture(dir: &Path, files: usize, seed: u64) -> Result<PathBuf> {
    let labels = LabelSet::default();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let corpus = dir.join("corpus");
    for i in 0..files {
        // two levels, like a per-show archive
        let sub = corpus.join(format!("show{:02}", i % 10));
        std::fs::create_dir_all(&sub)?;
        let id = format!("show{:02}/ep{i:04}.srt", i % 10);
        std::fs::write(sub.join(format!("ep{i:04}.srt")), subtitle_file(&id, &labels, &mut rng))?;
    }
    write_jsonl(&dir.join("segmenter_pairs.jsonl"), &segmenter_pairs(&labels, 600, &mut rng))?;

    let mut train = Vec::new();
    for label in 0..labels.len() {
        for _ in 0..30 {
            train.push(LabelledSentence {
                text: sentence(&labels, label, &mut rng),
                label: labels.name(label).to_string(),
            });
        }
    }
    write_jsonl(&dir.join("classifier_train.jsonl"), &train)?;

    let seeds: Vec<LabelledSentence> = labels_of(&labels, Role::Intent)
        .into_iter()
        .flat_map(|i| (0..10).map(move |_| i))
        .map(|i| LabelledSentence {
            text: sentence(&labels, i, &mut rng),
            label: labels.name(i).to_string(),
        })
        .collect();
    write_jsonl(&dir.join("intent_seeds.jsonl"), &seeds)?;
    write_jsonl(&dir.join("ed.jsonl"), &ed_dialogs(&labels, 200, &mut rng))?;

    let config = dir.join("pipeline.toml");
    std::fs::write(&config, CONFIG.replace("{seed}", &seed.to_string()))?;
    Ok(config)
}
