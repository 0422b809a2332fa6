use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use p2tx::pose::{read_pose, write_pose, Fps, PoseSequence};
use p2tx::resample::{resample, ResampleSpec};
use p2tx::trainer::Pair;

/// `*.pose` files of a directory in file-name order, or the file itself.
pub fn pose_files(path: &Path) -> anyhow::Result<Vec<PathBuf>> {
    if path.is_file() {
        return Ok(vec![path.to_path_buf()]);
    }
    let mut files: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading directory {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|e| e == "pose"))
        .collect();
    files.sort();
    Ok(files)
}

pub fn load_pose(path: &Path) -> anyhow::Result<PoseSequence> {
    let file = std::fs::File::open(path).with_context(|| format!("opening {}", path.display()))?;
    read_pose(std::io::BufReader::new(file)).with_context(|| format!("reading {}", path.display()))
}

pub fn save_pose(path: &Path, pose: &PoseSequence) -> anyhow::Result<()> {
    let file = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    let mut w = std::io::BufWriter::new(file);
    write_pose(pose, &mut w)?;
    std::io::Write::flush(&mut w)?;
    Ok(())
}

/// Loads poses, resampling any whose rate differs from `target`.
pub fn load_poses(path: &Path, target: Option<Fps>) -> anyhow::Result<Vec<PoseSequence>> {
    pose_files(path)?
        .iter()
        .map(|f| {
            let pose = load_pose(f)?;
            match target {
                Some(fps) if pose.fps() != fps => Ok(resample(&pose, ResampleSpec::new(fps)?)?),
                _ => Ok(pose),
            }
        })
        .collect()
}

pub fn read_lines(path: &Path) -> anyhow::Result<Vec<String>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn load_pairs(poses: &Path, text: &Path, target: Fps) -> anyhow::Result<Vec<Pair>> {
    let poses = load_poses(poses, Some(target))?;
    let lines = read_lines(text)?;
    if poses.len() != lines.len() {
        bail!(
            "{} pose files but {} lines in {}",
            poses.len(),
            lines.len(),
            text.display()
        );
    }
    if poses.is_empty() {
        bail!("no pose files found");
    }
    Ok(poses
        .into_iter()
        .zip(lines)
        .map(|(pose, text)| Pair { pose, text })
        .collect())
}

/// Writes `poses/NNNNN.pose` and `text.txt` under `dir`.
pub fn write_corpus(dir: &Path, poses: &[PoseSequence], texts: &[String]) -> anyhow::Result<()> {
    let pose_dir = dir.join("poses");
    std::fs::create_dir_all(&pose_dir)?;
    for (i, p) in poses.iter().enumerate() {
        save_pose(&pose_dir.join(format!("{i:05}.pose")), p)?;
    }
    let mut text = texts.join("\n");
    if !texts.is_empty() {
        text.push('\n');
    }
    std::fs::write(dir.join("text.txt"), text)?;
    Ok(())
}

/// Parses `25` or `30000/1001`.
pub fn parse_fps(s: &str) -> Result<Fps, String> {
    let (num, den) = match s.split_once('/') {
        Some((n, d)) => (n.trim(), d.trim()),
        None => (s.trim(), "1"),
    };
    let num: u32 = num.parse().map_err(|_| format!("invalid frame rate {s:?}"))?;
    let den: u32 = den.parse().map_err(|_| format!("invalid frame rate {s:?}"))?;
    Fps::new(num, den).map_err(|e| e.to_string())
}
