//! Deterministic synthetic corpus used by the integration tests and the
//! end-to-end examples. Sentences are generated from a fixed set of
//! templates so that every relation is signalled by surface wording; the
//! result covers all three overlap patterns, multi-token entities and a
//! sentence with five gold triplets.

use anyhow::{Context, Result};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;
use std::path::Path;

pub const RELATIONS: [&str; 6] = [
    "born_in",
    "capital_of",
    "citizen_of",
    "lives_in",
    "located_in",
    "works_for",
];

const PERSONS: [&str; 8] = [
    "anna kovacs",
    "ben ito",
    "carla diaz",
    "derek osei",
    "elena petrova",
    "farid khan",
    "grace lin",
    "henry adams",
];

const CITIES: [&str; 8] = [
    "oslo", "lima", "accra", "quito", "hanoi", "tunis", "vilnius", "tbilisi",
];

const COUNTRIES: [&str; 8] = [
    "norway",
    "peru",
    "ghana",
    "ecuador",
    "vietnam",
    "tunisia",
    "lithuania",
    "georgia",
];

const COMPANIES: [&str; 4] = ["acme corp", "globex", "initech", "umbrella labs"];

/// One sentence in the public release format.
#[derive(Debug, Clone, Serialize)]
pub struct FixtureRecord {
    pub text: String,
    pub triple_list: Vec<[String; 3]>,
}

fn rec(text: String, triples: &[(&str, &str, &str)]) -> FixtureRecord {
    FixtureRecord {
        text,
        triple_list: triples
            .iter()
            .map(|(s, r, o)| [s.to_string(), r.to_string(), o.to_string()])
            .collect(),
    }
}

/// Generate the fixture corpus: 64 sentences, fully determined by the
/// built-in seed.
pub fn records() -> Vec<FixtureRecord> {
    let mut rng = ChaCha8Rng::seed_from_u64(17);
    let mut out = Vec::new();
    let pick = |rng: &mut ChaCha8Rng, pool: &[&'static str]| *pool.choose(rng).unwrap();

    for i in 0..63 {
        let p = pick(&mut rng, &PERSONS);
        let ci = (0..CITIES.len()).collect::<Vec<_>>();
        let &c_idx = ci.choose(&mut rng).unwrap();
        let city = CITIES[c_idx];
        let country = COUNTRIES[c_idx];
        let company = pick(&mut rng, &COMPANIES);
        out.push(match i % 8 {
            0 => rec(
                format!("{p} was born in {city} ."),
                &[(p, "born_in", city)],
            ),
            1 => rec(
                format!("{p} lives in {city} ."),
                &[(p, "lives_in", city)],
            ),
            2 => rec(
                format!("{city} is the capital of {country} ."),
                &[(city, "capital_of", country)],
            ),
            3 => rec(
                format!("{city} is located in {country} ."),
                &[(city, "located_in", country)],
            ),
            4 => rec(
                format!("{p} works for {company} ."),
                &[(p, "works_for", company)],
            ),
            5 => rec(
                format!("{p} is a citizen of {country} ."),
                &[(p, "citizen_of", country)],
            ),
            // Entity-pair overlap: two relations between the same pair.
            6 => rec(
                format!("{p} was born in {city} and still lives in {city} ."),
                &[(p, "born_in", city), (p, "lives_in", city)],
            ),
            // Single-entity overlap: two objects share the subject.
            _ => {
                let other = CITIES[(c_idx + 3) % CITIES.len()];
                rec(
                    format!("{p} was born in {city} and lives in {other} ."),
                    &[(p, "born_in", city), (p, "lives_in", other)],
                )
            }
        });
    }

    // One sentence with five gold triplets.
    let p = PERSONS[0];
    let (city, country) = (CITIES[0], COUNTRIES[0]);
    let birth = CITIES[1];
    let company = COMPANIES[0];
    out.push(rec(
        format!(
            "{p} works for {company} , lives in {city} , was born in {birth} , \
             is a citizen of {country} and {city} is the capital of {country} ."
        ),
        &[
            (p, "works_for", company),
            (p, "lives_in", city),
            (p, "born_in", birth),
            (p, "citizen_of", country),
            (city, "capital_of", country),
        ],
    ));
    out
}

fn render_json(records: &[FixtureRecord]) -> Result<String> {
    let mut s = serde_json::to_string_pretty(records)?;
    s.push('\n');
    Ok(s)
}

/// The training split: all 64 sentences, as release-format JSON.
pub fn train_json() -> Result<String> {
    render_json(&records())
}

/// The validation split: every fifth sentence (a stride that visits every
/// template), as release-format JSON.
pub fn valid_json() -> Result<String> {
    let all = records();
    let valid: Vec<FixtureRecord> = all
        .iter()
        .enumerate()
        .filter(|(i, _)| i % 5 == 0)
        .map(|(_, r)| r.clone())
        .collect();
    render_json(&valid)
}

/// Write `train.json` and `valid.json` into a directory.
pub fn write_files(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)
        .with_context(|| format!("cannot create {}", dir.display()))?;
    std::fs::write(dir.join("train.json"), train_json()?)?;
    std::fs::write(dir.join("valid.json"), valid_json()?)?;
    Ok(())
}
