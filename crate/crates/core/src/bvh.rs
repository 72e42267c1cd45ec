//! Biovision Hierarchy (BVH) reading and writing.
//!
//! Rotations stay in degrees at this layer. End Sites are kept on the joint
//! that owns them and carry no channels.

use std::fmt::{self, Write as _};
use std::str::FromStr;

use ndarray::Array2;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BvhError {
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
    #[error("invalid motion: {0}")]
    Invalid(String),
}

fn parse_err<T>(line: usize, message: impl Into<String>) -> Result<T, BvhError> {
    Err(BvhError::Parse { line, message: message.into() })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Channel {
    Xposition,
    Yposition,
    Zposition,
    Xrotation,
    Yrotation,
    Zrotation,
}

impl Channel {
    pub fn is_position(self) -> bool {
        matches!(self, Channel::Xposition | Channel::Yposition | Channel::Zposition)
    }

    pub fn is_rotation(self) -> bool {
        !self.is_position()
    }

    /// Cartesian axis index (0 = X, 1 = Y, 2 = Z).
    pub fn axis(self) -> usize {
        match self {
            Channel::Xposition | Channel::Xrotation => 0,
            Channel::Yposition | Channel::Yrotation => 1,
            Channel::Zposition | Channel::Zrotation => 2,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Channel::Xposition => "Xposition",
            Channel::Yposition => "Yposition",
            Channel::Zposition => "Zposition",
            Channel::Xrotation => "Xrotation",
            Channel::Yrotation => "Yrotation",
            Channel::Zrotation => "Zrotation",
        }
    }
}

impl FromStr for Channel {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "Xposition" => Channel::Xposition,
            "Yposition" => Channel::Yposition,
            "Zposition" => Channel::Zposition,
            "Xrotation" => Channel::Xrotation,
            "Yrotation" => Channel::Yrotation,
            "Zrotation" => Channel::Zrotation,
            other => return Err(format!("unknown channel `{other}`")),
        })
    }
}

impl fmt::Display for Channel {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Joint {
    pub name: String,
    pub parent: Option<usize>,
    /// Offset from the parent joint, in centimeters.
    pub offset: [f64; 3],
    pub channels: Vec<Channel>,
    /// Offset of a terminal End Site, if the joint has one.
    pub end_site: Option<[f64; 3]>,
}

impl Joint {
    /// The three rotation channels in file order.
    pub fn rotation_order(&self) -> Option<[Channel; 3]> {
        let rot: Vec<Channel> = self.channels.iter().copied().filter(|c| c.is_rotation()).collect();
        match rot.as_slice() {
            [a, b, c] => Some([*a, *b, *c]),
            _ => None,
        }
    }
}

/// Joint hierarchy in topological order (parents precede children).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Skeleton {
    pub joints: Vec<Joint>,
}

impl Skeleton {
    pub fn len(&self) -> usize {
        self.joints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.joints.is_empty()
    }

    pub fn channel_count(&self) -> usize {
        self.joints.iter().map(|j| j.channels.len()).sum()
    }

    /// Column offset of each joint's first channel in a motion row.
    pub fn channel_offsets(&self) -> Vec<usize> {
        let mut acc = 0;
        self.joints
            .iter()
            .map(|j| {
                let start = acc;
                acc += j.channels.len();
                start
            })
            .collect()
    }

    pub fn find(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    /// Joints without child joints.
    pub fn leaves(&self) -> Vec<usize> {
        let mut has_child = vec![false; self.joints.len()];
        for j in &self.joints {
            if let Some(p) = j.parent {
                has_child[p] = true;
            }
        }
        (0..self.joints.len()).filter(|&i| !has_child[i]).collect()
    }

    pub fn validate(&self) -> Result<(), BvhError> {
        if self.joints.is_empty() {
            return Err(BvhError::Invalid("skeleton has no joints".into()));
        }
        for (i, j) in self.joints.iter().enumerate() {
            match (i, j.parent) {
                (0, None) => {}
                (0, Some(_)) => return Err(BvhError::Invalid("first joint must be the root".into())),
                (_, None) => return Err(BvhError::Invalid(format!("joint `{}` is a second root", j.name))),
                (_, Some(p)) if p >= i => {
                    return Err(BvhError::Invalid(format!("joint `{}` precedes its parent", j.name)))
                }
                _ => {}
            }
            if j.channels.len() != 3 && j.channels.len() != 6 {
                return Err(BvhError::Invalid(format!(
                    "joint `{}` has {} channels, expected 3 or 6",
                    j.name,
                    j.channels.len()
                )));
            }
        }
        Ok(())
    }
}

/// Skeleton plus per-frame channel values (rotations in degrees).
#[derive(Clone, Debug, PartialEq)]
pub struct RawMotion {
    pub skeleton: Skeleton,
    /// Seconds per frame.
    pub frame_time: f64,
    /// N × C channel matrix.
    pub frames: Array2<f64>,
}

impl RawMotion {
    pub fn frame_count(&self) -> usize {
        self.frames.nrows()
    }

    pub fn fps(&self) -> f64 {
        1.0 / self.frame_time
    }

    pub fn validate(&self) -> Result<(), BvhError> {
        self.skeleton.validate()?;
        if self.frame_time.is_nan() || self.frame_time <= 0.0 {
            return Err(BvhError::Invalid(format!("frame time {} must be positive", self.frame_time)));
        }
        if self.frames.ncols() != self.skeleton.channel_count() {
            return Err(BvhError::Invalid(format!(
                "{} columns for {} channels",
                self.frames.ncols(),
                self.skeleton.channel_count()
            )));
        }
        Ok(())
    }
}

struct Lines<'a> {
    inner: std::iter::Enumerate<std::str::Lines<'a>>,
    last: usize,
}

impl<'a> Lines<'a> {
    fn new(text: &'a str) -> Self {
        Self { inner: text.lines().enumerate(), last: 0 }
    }

    /// Next non-blank line as (1-based line number, tokens).
    fn next_tokens(&mut self) -> Option<(usize, Vec<&'a str>)> {
        for (i, line) in self.inner.by_ref() {
            self.last = i + 1;
            let tokens: Vec<&str> = line.split_whitespace().collect();
            if !tokens.is_empty() {
                return Some((i + 1, tokens));
            }
        }
        None
    }

    fn expect_tokens(&mut self) -> Result<(usize, Vec<&'a str>), BvhError> {
        match self.next_tokens() {
            Some(t) => Ok(t),
            None => parse_err(self.last + 1, "unexpected end of document"),
        }
    }
}

fn parse_f64(token: &str, line: usize) -> Result<f64, BvhError> {
    token
        .parse::<f64>()
        .ok()
        .filter(|v| v.is_finite())
        .map_or_else(|| parse_err(line, format!("expected a number, found `{token}`")), Ok)
}

fn parse_vec3(tokens: &[&str], line: usize) -> Result<[f64; 3], BvhError> {
    if tokens.len() != 4 {
        return parse_err(line, "OFFSET needs three values");
    }
    Ok([parse_f64(tokens[1], line)?, parse_f64(tokens[2], line)?, parse_f64(tokens[3], line)?])
}

/// Parses a BVH document.
pub fn parse_bvh(text: &str) -> Result<RawMotion, BvhError> {
    let mut lines = Lines::new(text);
    let (line, tokens) = lines.expect_tokens()?;
    if tokens != ["HIERARCHY"] {
        return parse_err(line, "expected HIERARCHY");
    }

    let mut joints: Vec<Joint> = Vec::new();
    // Stack of open blocks: Some(joint index) or None for an End Site.
    let mut stack: Vec<Option<usize>> = Vec::new();
    let mut pending: Option<(usize, Option<usize>, Option<String>)> = None;

    loop {
        let (line, tokens) = lines.expect_tokens()?;
        match tokens[0] {
            "ROOT" | "JOINT" => {
                if tokens[0] == "ROOT" && !(joints.is_empty() && stack.is_empty()) {
                    return parse_err(line, "only one ROOT is supported");
                }
                if tokens[0] == "JOINT" && stack.is_empty() {
                    return parse_err(line, "JOINT outside of ROOT");
                }
                if tokens.len() < 2 {
                    return parse_err(line, "joint without a name");
                }
                let parent = match stack.last() {
                    Some(Some(p)) => Some(*p),
                    Some(None) => return parse_err(line, "joint nested inside an End Site"),
                    None => None,
                };
                pending = Some((line, parent, Some(tokens[1..].join(" "))));
            }
            "End" => {
                if tokens.get(1) != Some(&"Site") {
                    return parse_err(line, "expected `End Site`");
                }
                match stack.last() {
                    Some(Some(p)) => pending = Some((line, Some(*p), None)),
                    _ => return parse_err(line, "End Site outside of a joint"),
                }
            }
            "{" => {
                let Some((_, parent, name)) = pending.take() else {
                    return parse_err(line, "unexpected `{`");
                };
                match name {
                    Some(name) => {
                        joints.push(Joint { name, parent, offset: [0.0; 3], channels: Vec::new(), end_site: None });
                        stack.push(Some(joints.len() - 1));
                    }
                    None => stack.push(None),
                }
            }
            "}" => {
                if stack.pop().is_none() {
                    return parse_err(line, "unbalanced `}`");
                }
                if stack.is_empty() {
                    break;
                }
            }
            "OFFSET" => {
                let offset = parse_vec3(&tokens, line)?;
                match stack.last() {
                    Some(Some(j)) => joints[*j].offset = offset,
                    Some(None) => {
                        let owner = match stack.iter().rev().nth(1) {
                            Some(Some(o)) => *o,
                            _ => return parse_err(line, "End Site without owner"),
                        };
                        joints[owner].end_site = Some(offset);
                    }
                    None => return parse_err(line, "OFFSET outside of a block"),
                }
            }
            "CHANNELS" => {
                let Some(Some(j)) = stack.last() else {
                    return parse_err(line, "CHANNELS outside of a joint");
                };
                let count: usize = match tokens.get(1).and_then(|t| t.parse().ok()) {
                    Some(c) => c,
                    None => return parse_err(line, "CHANNELS needs a count"),
                };
                if tokens.len() != count + 2 {
                    return parse_err(line, format!("CHANNELS declares {count} but lists {}", tokens.len() - 2));
                }
                let mut channels = Vec::with_capacity(count);
                for t in &tokens[2..] {
                    match t.parse::<Channel>() {
                        Ok(c) => channels.push(c),
                        Err(e) => return parse_err(line, e),
                    }
                }
                joints[*j].channels = channels;
            }
            "MOTION" => return parse_err(line, "MOTION before the hierarchy was closed (unbalanced braces)"),
            other => return parse_err(line, format!("unexpected token `{other}`")),
        }
    }

    let skeleton = Skeleton { joints };
    skeleton.validate().or_else(|e| parse_err(lines.last, e.to_string()))?;

    let (line, tokens) = lines.expect_tokens()?;
    if tokens != ["MOTION"] {
        return parse_err(line, "expected MOTION");
    }
    let (line, tokens) = lines.expect_tokens()?;
    let frame_count: usize = match tokens.as_slice() {
        ["Frames:", n] => n.parse().or_else(|_| parse_err(line, "invalid frame count"))?,
        _ => return parse_err(line, "expected `Frames: <count>`"),
    };
    let (line, tokens) = lines.expect_tokens()?;
    let frame_time = match tokens.as_slice() {
        ["Frame", "Time:", t] => parse_f64(t, line)?,
        _ => return parse_err(line, "expected `Frame Time: <seconds>`"),
    };
    if frame_time <= 0.0 {
        return parse_err(line, "frame time must be positive");
    }

    let width = skeleton.channel_count();
    let mut data = Vec::with_capacity(frame_count * width);
    for _ in 0..frame_count {
        let (line, tokens) = lines.expect_tokens()?;
        if tokens.len() != width {
            return parse_err(line, format!("motion row has {} values, expected {width}", tokens.len()));
        }
        for t in tokens {
            data.push(parse_f64(t, line)?);
        }
    }
    if let Some((line, _)) = lines.next_tokens() {
        return parse_err(line, format!("more motion rows than the declared {frame_count} frames"));
    }
    let frames = Array2::from_shape_vec((frame_count, width), data).expect("row width checked");
    Ok(RawMotion { skeleton, frame_time, frames })
}

/// Emits a BVH document: values with 6 decimals, frame time with 7.
pub fn serialize_bvh(motion: &RawMotion) -> Result<String, BvhError> {
    motion.validate()?;
    let skel = &motion.skeleton;
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); skel.len()];
    for (i, j) in skel.joints.iter().enumerate() {
        if let Some(p) = j.parent {
            children[p].push(i);
        }
    }

    let mut out = String::from("HIERARCHY\n");
    write_joint(&mut out, skel, &children, 0, 0);
    out.push_str("MOTION\n");
    let _ = writeln!(out, "Frames: {}", motion.frame_count());
    let _ = writeln!(out, "Frame Time: {:.7}", motion.frame_time);
    for row in motion.frames.rows() {
        let mut first = true;
        for v in row {
            if !first {
                out.push(' ');
            }
            first = false;
            let _ = write!(out, "{v:.6}");
        }
        out.push('\n');
    }
    Ok(out)
}

fn write_joint(out: &mut String, skel: &Skeleton, children: &[Vec<usize>], index: usize, depth: usize) {
    let joint = &skel.joints[index];
    let pad = "\t".repeat(depth);
    let kind = if joint.parent.is_none() { "ROOT" } else { "JOINT" };
    let _ = writeln!(out, "{pad}{kind} {}", joint.name);
    let _ = writeln!(out, "{pad}{{");
    let [x, y, z] = joint.offset;
    let _ = writeln!(out, "{pad}\tOFFSET {x:.6} {y:.6} {z:.6}");
    let names: Vec<&str> = joint.channels.iter().map(|c| c.as_str()).collect();
    let _ = writeln!(out, "{pad}\tCHANNELS {} {}", names.len(), names.join(" "));
    for &c in &children[index] {
        write_joint(out, skel, children, c, depth + 1);
    }
    if let Some([x, y, z]) = joint.end_site {
        let _ = writeln!(out, "{pad}\tEnd Site");
        let _ = writeln!(out, "{pad}\t{{");
        let _ = writeln!(out, "{pad}\t\tOFFSET {x:.6} {y:.6} {z:.6}");
        let _ = writeln!(out, "{pad}\t}}");
    }
    let _ = writeln!(out, "{pad}}}");
}
