//! `--help` snapshots. Regenerate with `UPDATE_SNAPSHOTS=1 cargo test -p rtmd-cli --test help`.

use std::path::PathBuf;
use std::process::Command;

const SUBCOMMANDS: [&str; 8] = [
    "",
    "init-weights",
    "infer",
    "bench",
    "eval",
    "arch-info",
    "loss-check",
    "dump-config",
];

fn help(sub: &str) -> String {
    let mut cmd = Command::new(env!("CARGO_BIN_EXE_rtmd"));
    if !sub.is_empty() {
        cmd.arg(sub);
    }
    let out = cmd.arg("--help").output().unwrap();
    assert!(out.status.success());
    String::from_utf8(out.stdout).unwrap()
}

fn snapshot_path(sub: &str) -> PathBuf {
    let name = if sub.is_empty() { "rtmd" } else { sub };
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/snapshots")
        .join(format!("{name}.help.txt"))
}

#[test]
fn help_matches_snapshots() {
    let update = std::env::var_os("UPDATE_SNAPSHOTS").is_some();
    for sub in SUBCOMMANDS {
        let actual = help(sub);
        let path = snapshot_path(sub);
        if update {
            std::fs::create_dir_all(path.parent().unwrap()).unwrap();
            std::fs::write(&path, &actual).unwrap();
            continue;
        }
        let expected = std::fs::read_to_string(&path)
            .unwrap_or_else(|_| panic!("missing snapshot {}", path.display()));
        assert_eq!(
            actual, expected,
            "help for `{sub}` changed; rerun with UPDATE_SNAPSHOTS=1"
        );
    }
}

/// Every long flag in the usage section has its own documented line.
#[test]
fn every_flag_is_described() {
    for sub in &SUBCOMMANDS[1..] {
        let text = help(sub);
        let (_, options) = text.split_once("Options:").unwrap();
        for line in options
            .lines()
            .filter(|l| l.trim_start().starts_with("--") || l.trim_start().starts_with('-'))
        {
            let flag = line
                .split_whitespace()
                .find(|w| w.starts_with("--"))
                .unwrap();
            // clap separates the flag column from its description by at least two spaces
            let described = line
                .trim()
                .split("  ")
                .filter(|s| !s.trim().is_empty())
                .count()
                >= 2;
            assert!(described, "`{sub} {flag}` has no description");
        }
    }
}
