//! Regenerates the demo corpus under `tests/fixtures/demo` with vectors
//! from the offline hash embedder (dimension 128, seed 0).
//!
//! ```text
//! cargo run -p routerag --example build_fixture [OUT_DIR]
//! ```

use std::fs;
use std::io::{self, Write};
use std::path::PathBuf;

use routerag::corpus::{fact_key, EmbeddingKind, EmbeddingRecord, GraphRecord, Passage};
use routerag::embedding::HashEmbedder;

/// (id, title, text, entities mentioned)
const PASSAGES: &[(&str, &str, &str, &[&str])] = &[
    (
        "superstore",
        "Superstore (TV series)",
        "Superstore is an American single-camera sitcom that aired on NBC. The series was created by Justin Spitzer and follows the employees of a big-box store in St. Louis.",
        &["Superstore", "NBC", "Justin Spitzer", "St. Louis"],
    ),
    (
        "justin_spitzer",
        "Justin Spitzer",
        "Justin Spitzer is an American television writer and producer. Before creating Superstore he was a writer and producer on The Office.",
        &["Justin Spitzer", "Superstore", "The Office"],
    ),
    (
        "johnny_pemberton",
        "Johnny Pemberton",
        "Johnny Pemberton is an American actor and comedian. He played Bo Thompson in the sitcom Superstore.",
        &["Johnny Pemberton", "Superstore"],
    ),
    (
        "the_office",
        "The Office (American TV series)",
        "The Office is an American mockumentary sitcom that aired on NBC from 2005 to 2013.",
        &["The Office", "NBC"],
    ),
    (
        "nbc",
        "NBC",
        "NBC, the National Broadcasting Company, is an American broadcast television network headquartered in New York City.",
        &["NBC", "National Broadcasting Company", "New York City"],
    ),
    (
        "st_louis",
        "St. Louis",
        "St. Louis is a city in the U.S. state of Missouri on the Mississippi River.",
        &["St. Louis", "Missouri"],
    ),
    (
        "hello_tomorrow",
        "Hello Tomorrow (album)",
        "Hello Tomorrow is a 2010 studio album by the saxophonist Dave Koz.",
        &["Hello Tomorrow", "Dave Koz"],
    ),
    (
        "dave_koz",
        "Dave Koz",
        "Dave Koz is an American smooth jazz saxophonist and radio host.",
        &["Dave Koz", "smooth jazz"],
    ),
    (
        "kenny_g",
        "Kenny G",
        "Kenny G is an American smooth jazz saxophonist.",
        &["Kenny G", "smooth jazz"],
    ),
    (
        "george_benson",
        "George Benson",
        "George Benson is an American guitarist and singer who began his career as a jazz guitarist.",
        &["George Benson", "jazz"],
    ),
    (
        "paris",
        "Paris",
        "Paris is the capital and largest city of France.",
        &["Paris", "France"],
    ),
    (
        "france",
        "France",
        "France is a country in Western Europe.",
        &["France"],
    ),
];

const RELATIONS: &[(&str, &str, &str)] = &[
    ("Superstore", "created by", "Justin Spitzer"),
    ("Superstore", "aired on", "NBC"),
    ("Superstore", "set in", "St. Louis"),
    ("Johnny Pemberton", "cast member of", "Superstore"),
    ("Justin Spitzer", "writer of", "The Office"),
    ("The Office", "aired on", "NBC"),
    ("NBC", "headquartered in", "New York City"),
    ("St. Louis", "located in", "Missouri"),
    ("Hello Tomorrow", "performed by", "Dave Koz"),
    ("Dave Koz", "genre", "smooth jazz"),
    ("Kenny G", "genre", "smooth jazz"),
    ("George Benson", "genre", "jazz"),
    ("Paris", "capital of", "France"),
];

const SYNONYMS: &[(&str, &str, f64)] = &[("NBC", "National Broadcasting Company", 0.95)];

fn write_jsonl<T: serde::Serialize>(path: PathBuf, records: &[T]) -> io::Result<()> {
    let mut out = io::BufWriter::new(fs::File::create(&path)?);
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

fn main() -> io::Result<()> {
    let dir = std::env::args()
        .nth(1)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("tests/fixtures/demo"));
    fs::create_dir_all(&dir)?;
    let embedder = HashEmbedder::new(128, 0);

    let passages: Vec<Passage> = PASSAGES
        .iter()
        .map(|(id, title, text, _)| Passage {
            id: id.to_string(),
            title: title.to_string(),
            text: text.to_string(),
        })
        .collect();

    let mut embeddings: Vec<EmbeddingRecord> = passages
        .iter()
        .map(|p| EmbeddingRecord {
            owner_id: p.id.clone(),
            kind: EmbeddingKind::Passage,
            vector: embedder.vector(&format!("{} {}", p.title, p.text)),
        })
        .collect();

    let mut graph = Vec::new();
    let mut entities = Vec::new();
    let mut note = |name: &str| {
        let key = routerag::corpus::canonical_entity(name);
        if !entities.contains(&key) {
            entities.push(key);
        }
    };
    for (s, r, o) in RELATIONS {
        note(s);
        note(o);
        graph.push(GraphRecord::Relation {
            s: s.to_string(),
            r: r.to_string(),
            o: o.to_string(),
        });
    }
    for (id, _, _, mentioned) in PASSAGES {
        for e in *mentioned {
            note(e);
            graph.push(GraphRecord::Mention {
                e: e.to_string(),
                p: id.to_string(),
            });
        }
    }
    for (a, b, w) in SYNONYMS {
        note(a);
        note(b);
        graph.push(GraphRecord::Synonym {
            a: a.to_string(),
            b: b.to_string(),
            w: *w,
        });
    }

    for e in &entities {
        embeddings.push(EmbeddingRecord {
            owner_id: e.clone(),
            kind: EmbeddingKind::Entity,
            vector: embedder.vector(e),
        });
    }
    for (s, r, o) in RELATIONS {
        embeddings.push(EmbeddingRecord {
            owner_id: fact_key(s, r, o),
            kind: EmbeddingKind::Fact,
            vector: embedder.vector(&format!("{s} {r} {o}")),
        });
    }

    write_jsonl(dir.join("passages.jsonl"), &passages)?;
    write_jsonl(dir.join("embeddings.jsonl"), &embeddings)?;
    write_jsonl(dir.join("graph.jsonl"), &graph)?;
    println!(
        "wrote {} passages, {} vectors, {} graph records to {}",
        passages.len(),
        embeddings.len(),
        graph.len(),
        dir.display()
    );
    Ok(())
}
