//! JSONL task files: one `{"id", "prompt", "answer"}` object per line.

use std::collections::HashSet;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::SyntheticTask;

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate id {id:?}")]
    DuplicateId { line: usize, id: String },
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskInstance {
    pub id: String,
    pub prompt: String,
    #[serde(rename = "answer")]
    pub gold_answer: String,
}

/// Parses a JSONL dataset. Blank lines are skipped; ids must be unique.
pub fn read_dataset<R: BufRead>(reader: R) -> Result<Vec<TaskInstance>, DatasetError> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (i, line) in reader.lines().enumerate() {
        let line_no = i + 1;
        let line = line.map_err(|e| DatasetError::Malformed { line: line_no, message: e.to_string() })?;
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskInstance = serde_json::from_str(&line)
            .map_err(|e| DatasetError::Malformed { line: line_no, message: e.to_string() })?;
        if !seen.insert(task.id.clone()) {
            return Err(DatasetError::DuplicateId { line: line_no, id: task.id });
        }
        out.push(task);
    }
    Ok(out)
}

pub fn load_dataset(path: &Path) -> Result<Vec<TaskInstance>, DatasetError> {
    let file = std::fs::File::open(path).map_err(|source| DatasetError::Io { path: path.to_path_buf(), source })?;
    let tasks = read_dataset(BufReader::new(file))?;
    if tasks.is_empty() {
        log::warn!("dataset {} is empty", path.display());
    }
    Ok(tasks)
}

pub fn write_dataset<W: Write>(tasks: &[TaskInstance], mut out: W) -> std::io::Result<()> {
    for t in tasks {
        serde_json::to_writer(&mut out, t)?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

/// `count` two-arm synthetic tasks with ids `syn-0000`, `syn-0001`, ...
pub fn synthetic_suite(count: usize, seed: u64) -> Vec<TaskInstance> {
    SyntheticTask::two_arm_suite(count, seed)
        .into_iter()
        .enumerate()
        .map(|(i, task)| TaskInstance { id: format!("syn-{i:04}"), prompt: task.to_prompt(), gold_answer: task.gold_answer() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reads_valid_lines_in_order() {
        let text = "{\"id\":\"a\",\"prompt\":\"1+1?\",\"answer\":\"2\"}\n\n{\"id\":\"b\",\"prompt\":\"2+2?\",\"answer\":\"4\"}\n";
        let tasks = read_dataset(text.as_bytes()).unwrap();
        assert_eq!(tasks.len(), 2);
        assert_eq!(tasks[1].gold_answer, "4");
    }

    #[test]
    fn missing_field_names_the_line() {
        let text = "{\"id\":\"a\",\"prompt\":\"p\",\"answer\":\"2\"}\n{\"id\":\"b\",\"prompt\":\"p\"}\n";
        match read_dataset(text.as_bytes()) {
            Err(DatasetError::Malformed { line: 2, message }) => assert!(message.contains("answer")),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let line = "{\"id\":\"a\",\"prompt\":\"p\",\"answer\":\"2\"}\n";
        assert!(matches!(read_dataset(line.repeat(2).as_bytes()), Err(DatasetError::DuplicateId { line: 2, .. })));
    }

    #[test]
    fn empty_file_gives_empty_dataset() {
        let file = tempfile::NamedTempFile::new().unwrap();
        assert!(load_dataset(file.path()).unwrap().is_empty());
    }

    #[test]
    fn synthetic_suite_round_trips() {
        let tasks = synthetic_suite(5, 3);
        let mut buf = Vec::new();
        write_dataset(&tasks, &mut buf).unwrap();
        assert_eq!(read_dataset(buf.as_slice()).unwrap(), tasks);
        for t in &tasks {
            assert_eq!(SyntheticTask::from_prompt(&t.prompt).unwrap().gold_answer(), t.gold_answer);
        }
    }
}
