//! JSONL serialization of score records and selection manifests.
//!
//! Keys are written in a fixed order and reals with 17 significant digits,
//! so identical inputs give byte-identical files and values round-trip
//! exactly.

use std::fs::File;
use std::io::{BufRead, BufReader};
use std::path::Path;

use crate::depscore::ChunkScore;
use crate::error::{Error, Result};
use crate::selector::SelectionManifest;

/// Formats a real with 17 significant digits.
pub fn fmt_real(x: f64) -> String {
    format!("{x:.16e}")
}

fn json_str(s: &str) -> String {
    serde_json::to_string(s).expect("strings serialize")
}

/// One score record, without trailing newline.
pub fn score_line(s: &ChunkScore) -> String {
    format!(
        "{{\"doc_id\":{},\"chunk_index\":{},\"category\":\"{}\",\"L\":{},\"k\":{},\"ds_t\":{},\"du_t\":{},\"population_mode\":\"{}\",\"source_fingerprint\":{}}}",
        json_str(&s.doc_id),
        s.chunk_index,
        s.category,
        s.window,
        s.k,
        fmt_real(s.ds_t),
        fmt_real(s.du_t),
        s.population_mode.as_str(),
        json_str(&s.source_fingerprint),
    )
}

pub fn parse_score_line(line: &str) -> Result<ChunkScore> {
    serde_json::from_str(line).map_err(|e| Error::Format(e.to_string()))
}

/// Reads a score file. With `lenient`, unparsable lines are skipped and
/// counted (a run interrupted mid-write can leave a partial last line);
/// otherwise the first bad line is an error.
pub fn read_scores(path: impl AsRef<Path>, lenient: bool) -> Result<(Vec<ChunkScore>, usize)> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut scores = Vec::new();
    let mut skipped = 0;
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let line = line.map_err(|e| Error::io(path, e))?;
        if line.trim().is_empty() {
            continue;
        }
        match parse_score_line(&line) {
            Ok(s) => scores.push(s),
            Err(_) if lenient => skipped += 1,
            Err(e) => {
                return Err(Error::Format(format!("{}:{}: {e}", path.display(), i + 1)));
            }
        }
    }
    Ok((scores, skipped))
}

/// Manifest JSONL: one `{"doc_id","chunk_index","category","lds_t","rank"}`
/// object per selected chunk, newline-terminated.
pub fn manifest_jsonl(manifest: &SelectionManifest) -> String {
    let mut out = String::new();
    for s in &manifest.selected {
        out.push_str(&format!(
            "{{\"doc_id\":{},\"chunk_index\":{},\"category\":\"{}\",\"lds_t\":{},\"rank\":{}}}\n",
            json_str(&s.doc_id),
            s.chunk_index,
            s.category,
            fmt_real(s.lds_t),
            s.rank
        ));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::Category;
    use crate::depscore::PopulationMode;
    use proptest::prelude::*;

    fn sample(ds: f64, du: f64) -> ChunkScore {
        ChunkScore {
            doc_id: "doc \"7\"".into(),
            chunk_index: 3,
            category: Category::Arxiv,
            window: 32768,
            k: 8192,
            ds_t: ds,
            du_t: du,
            population_mode: PopulationMode::FullTriangle,
            source_fingerprint: "synthetic:uniform".into(),
        }
    }

    #[test]
    fn line_layout() {
        let line = score_line(&sample(0.75, -0.0));
        assert_eq!(
            line,
            "{\"doc_id\":\"doc \\\"7\\\"\",\"chunk_index\":3,\"category\":\"arxiv\",\"L\":32768,\"k\":8192,\
             \"ds_t\":7.5000000000000000e-1,\"du_t\":-0.0000000000000000e0,\
             \"population_mode\":\"full-triangle\",\"source_fingerprint\":\"synthetic:uniform\"}"
        );
    }

    proptest! {
        #[test]
        fn reals_round_trip(ds in 0.0f64..1.0, du in -1.0f64..0.0) {
            let s = sample(ds, du);
            prop_assert_eq!(parse_score_line(&score_line(&s)).unwrap(), s);
        }
    }

    #[test]
    fn lenient_read_skips_partial_line() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("s.jsonl");
        let full = score_line(&sample(0.5, -1e-7));
        std::fs::write(&p, format!("{full}\n{}", &full[..20])).unwrap();
        let (scores, skipped) = read_scores(&p, true).unwrap();
        assert_eq!((scores.len(), skipped), (1, 1));
        assert!(read_scores(&p, false).is_err());
    }
}
