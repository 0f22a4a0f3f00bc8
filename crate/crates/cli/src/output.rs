use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use anyhow::{Context, Result};
use clap::ValueEnum;
use maxsim_core::ScoredParent;
use serde::Serialize;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, ValueEnum)]
pub enum Format {
    /// One JSON record per ranked parent.
    #[default]
    Jsonl,
    /// `query_id Q0 parent_id rank score tag`
    Trec,
}

#[derive(Serialize)]
struct RankRecord<'a> {
    query_id: &'a str,
    rank: usize,
    parent_id: &'a str,
    score: f32,
    stage: &'a str,
}

pub fn sink(path: Option<&Path>) -> Result<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("creating {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

pub fn write_ranking(
    out: &mut dyn Write,
    format: Format,
    query_id: &str,
    ranking: &[ScoredParent],
    tag: &str,
) -> io::Result<()> {
    for (i, p) in ranking.iter().enumerate() {
        match format {
            Format::Jsonl => {
                let rec = RankRecord {
                    query_id,
                    rank: i + 1,
                    parent_id: &p.parent_id,
                    score: p.score,
                    stage: p.stage.as_str(),
                };
                serde_json::to_writer(&mut *out, &rec)?;
                writeln!(out)?;
            }
            Format::Trec => {
                writeln!(out, "{query_id} Q0 {} {} {:.6} {tag}", p.parent_id, i + 1, p.score)?;
            }
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use maxsim_core::Stage;

    #[test]
    fn both_formats() {
        let ranking = vec![
            ScoredParent { parent_id: "a".into(), score: 1.5, stage: Stage::Stage2 },
            ScoredParent { parent_id: "b".into(), score: 0.25, stage: Stage::Stage2 },
        ];
        let mut buf = Vec::new();
        write_ranking(&mut buf, Format::Jsonl, "q1", &ranking, "x").unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text.lines().next().unwrap(),
            r#"{"query_id":"q1","rank":1,"parent_id":"a","score":1.5,"stage":"stage2"}"#
        );
        let mut buf = Vec::new();
        write_ranking(&mut buf, Format::Trec, "q1", &ranking, "run").unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "q1 Q0 a 1 1.500000 run\nq1 Q0 b 2 0.250000 run\n");
    }
}
