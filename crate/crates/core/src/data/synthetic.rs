//! Template-generated questions in TREC label format, for exercising the
//! pipeline without the real corpus.

use super::trec::{Dataset, Example, Split, NUM_CLASSES};
use crate::numerics::Rng;

const PEOPLE: &[&str] = &[
    "lincoln",
    "napoleon",
    "shakespeare",
    "einstein",
    "newton",
    "mozart",
    "picasso",
    "darwin",
    "edison",
    "gandhi",
    "cleopatra",
    "galileo",
    "beethoven",
    "curie",
    "columbus",
    "tesla",
];
const PLACES: &[&str] = &[
    "paris", "tokyo", "egypt", "canada", "brazil", "kenya", "norway", "peru", "india", "texas",
    "ohio", "sydney", "berlin", "chicago", "madrid", "nepal",
];
const THINGS: &[&str] = &[
    "volcano",
    "telescope",
    "glacier",
    "computer",
    "bridge",
    "satellite",
    "pyramid",
    "piano",
    "rainbow",
    "tornado",
    "diamond",
    "engine",
    "comet",
    "vaccine",
    "battery",
    "compass",
];
const ABBRS: &[&str] = &[
    "nasa", "fbi", "dna", "cnn", "nato", "unesco", "laser", "radar", "scuba", "aids", "ibm", "ufo",
    "bbc", "gmt",
];
const WORKS: &[&str] = &[
    "the telephone",
    "the light bulb",
    "hamlet",
    "the theory of relativity",
    "penicillin",
    "the printing press",
    "the mona lisa",
    "the radio",
    "calculus",
    "the airplane",
];
const ROLES: &[&str] = &[
    "president",
    "king",
    "astronaut",
    "author",
    "painter",
    "inventor",
    "queen",
    "emperor",
];
const ANIMALS: &[&str] = &[
    "cats", "dogs", "bees", "whales", "birds", "ants", "bats", "frogs",
];
const ACTIONS: &[&str] = &[
    "sleep",
    "migrate",
    "hibernate",
    "sing",
    "swarm",
    "purr",
    "hunt",
];
const CATEGORIES: &[&str] = &[
    "animal",
    "plant",
    "food",
    "sport",
    "instrument",
    "language",
    "color",
    "disease",
];

const TEMPLATES: [&[&str]; NUM_CLASSES] = [
    &[
        "What does {abbr} stand for ?",
        "What is the full form of {abbr} ?",
        "What is the abbreviation for the {thing} agency ?",
        "{abbr} is an acronym for what ?",
    ],
    &[
        "What is a {thing} ?",
        "How does a {thing} work ?",
        "Why do {animal} {action} ?",
        "What is the definition of {thing} ?",
        "How do you make a {thing} ?",
        "What causes a {thing} to form ?",
    ],
    &[
        "What {cat} is found in {place} ?",
        "What kind of {cat} is a {thing} ?",
        "What color is a {thing} ?",
        "Name a {cat} that {animal} eat .",
        "What is the national {cat} of {place} ?",
        "What {cat} did {person} like ?",
    ],
    &[
        "Who invented {work} ?",
        "Who was the first {role} of {place} ?",
        "Who wrote {work} ?",
        "What {role} discovered the {thing} ?",
        "Who is {person} ?",
        "Which {role} was born in {place} ?",
    ],
    &[
        "Where is {place} ?",
        "Where was {person} born ?",
        "What country is the largest {thing} in ?",
        "What city is home to the {thing} museum ?",
        "Where do {animal} {action} ?",
        "In what state is {place} ?",
    ],
    &[
        "How many {animal} live in {place} ?",
        "When did {person} die ?",
        "How much does a {thing} cost ?",
        "What year was {work} invented ?",
        "How far is {place} from {place} ?",
        "How long does a {thing} last ?",
        "When was {person} born ?",
    ],
];

const FINE: [&str; NUM_CLASSES] = ["exp", "def", "other", "ind", "other", "count"];

/// Approximate class frequencies of the real training file.
const CLASS_WEIGHTS: [f64; NUM_CLASSES] = [0.016, 0.212, 0.229, 0.223, 0.154, 0.166];

fn pick<'a>(items: &[&'a str], rng: &mut Rng) -> &'a str {
    items[rng.below(items.len())]
}

fn fill(template: &str, rng: &mut Rng) -> String {
    let mut out = String::new();
    let mut rest = template;
    while let Some(start) = rest.find('{') {
        out.push_str(&rest[..start]);
        let end = start + rest[start..].find('}').expect("closed slot");
        let slot = match &rest[start + 1..end] {
            "abbr" => pick(ABBRS, rng).to_uppercase(),
            "thing" => pick(THINGS, rng).to_string(),
            "animal" => pick(ANIMALS, rng).to_string(),
            "action" => pick(ACTIONS, rng).to_string(),
            "cat" => pick(CATEGORIES, rng).to_string(),
            "place" => capitalize(pick(PLACES, rng)),
            "person" => capitalize(pick(PEOPLE, rng)),
            "work" => pick(WORKS, rng).to_string(),
            "role" => pick(ROLES, rng).to_string(),
            other => panic!("unknown slot {other}"),
        };
        out.push_str(&slot);
        rest = &rest[end + 1..];
    }
    out.push_str(rest);
    out
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

/// `n` questions drawn from fixed templates; every class appears when `n >= 6`.
pub fn synthetic_dataset(n: usize, split: Split, seed: u64) -> Dataset {
    let mut rng = Rng::new(seed);
    let examples = (0..n)
        .map(|i| {
            let class = if i < NUM_CLASSES {
                i
            } else {
                rng.categorical(&CLASS_WEIGHTS)
            };
            let text = fill(pick(TEMPLATES[class], &mut rng), &mut rng);
            Example {
                text,
                coarse: class,
                fine: FINE[class].to_string(),
            }
        })
        .collect();
    Dataset::new(split, examples)
}

/// The dataset in label-file form, one question per line.
pub fn render_dataset(ds: &Dataset) -> String {
    ds.examples().iter().map(|e| e.render() + "\n").collect()
}
