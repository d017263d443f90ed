//! Skeletal parameterization.
//!
//! A [`SkeletonSchema`] fixes every dimension count used by the rest of the
//! crate: the native pose layout (`6` root channels followed by Euler DoF of
//! every joint), the continuous layout (6D blocks for 3-DoF joints, `(cos,
//! sin)` pairs for 1-DoF joints, jaw dropped) and the anatomical groups used
//! to weight the velocity loss.
//!
//! Schemas are loaded from a small line-oriented text format; see
//! `docs/schema-format.md` in the repository for the grammar.

use std::collections::HashMap;
use std::fmt;
use std::ops::Range;
use std::str::FromStr;

use nalgebra::Vector3;
use sha2::{Digest, Sha256};

/// Number of root channels in front of every pose frame.
pub const ROOT_CHANNELS: usize = 6;

/// Built-in schema documents shipped with the crate.
pub const MHR260_DOCUMENT: &str = include_str!("../schemas/mhr260.schema");
pub const CHAIN3_DOCUMENT: &str = include_str!("../schemas/chain3.schema");

#[derive(Debug, thiserror::Error, Clone, PartialEq)]
pub enum SchemaError {
    #[error("parse error at line {line}, field `{field}`: {message}")]
    Parse {
        line: usize,
        field: String,
        message: String,
    },
    #[error("topology error: {0}")]
    Topology(String),
    #[error("dimension error: {0}")]
    Dimension(String),
    #[error("unknown schema `{0}`")]
    Unknown(String),
}

fn parse_err(line: usize, field: &str, message: impl Into<String>) -> SchemaError {
    SchemaError::Parse {
        line,
        field: field.to_string(),
        message: message.into(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Axis {
    X,
    Y,
    Z,
}

impl Axis {
    pub fn index(self) -> usize {
        match self {
            Axis::X => 0,
            Axis::Y => 1,
            Axis::Z => 2,
        }
    }

    pub fn unit(self) -> Vector3<f64> {
        let mut v = Vector3::zeros();
        v[self.index()] = 1.0;
        v
    }

    fn from_char(c: char) -> Option<Axis> {
        match c.to_ascii_uppercase() {
            'X' => Some(Axis::X),
            'Y' => Some(Axis::Y),
            'Z' => Some(Axis::Z),
            _ => None,
        }
    }

    fn as_char(self) -> char {
        match self {
            Axis::X => 'x',
            Axis::Y => 'y',
            Axis::Z => 'z',
        }
    }
}

/// Intrinsic Tait-Bryan rotation order. `Xyz` means `R = Rx(a) * Ry(b) * Rz(c)`
/// where `(a, b, c)` are the joint's three stored angles.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RotationOrder {
    Xyz,
    Xzy,
    Yxz,
    Yzx,
    Zxy,
    Zyx,
}

impl RotationOrder {
    pub const ALL: [RotationOrder; 6] = [
        RotationOrder::Xyz,
        RotationOrder::Xzy,
        RotationOrder::Yxz,
        RotationOrder::Yzx,
        RotationOrder::Zxy,
        RotationOrder::Zyx,
    ];

    pub fn axes(self) -> [Axis; 3] {
        use Axis::*;
        match self {
            RotationOrder::Xyz => [X, Y, Z],
            RotationOrder::Xzy => [X, Z, Y],
            RotationOrder::Yxz => [Y, X, Z],
            RotationOrder::Yzx => [Y, Z, X],
            RotationOrder::Zxy => [Z, X, Y],
            RotationOrder::Zyx => [Z, Y, X],
        }
    }

    /// `true` for the cyclic permutations XYZ, YZX and ZXY.
    pub fn is_cyclic(self) -> bool {
        matches!(
            self,
            RotationOrder::Xyz | RotationOrder::Yzx | RotationOrder::Zxy
        )
    }
}

impl FromStr for RotationOrder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let chars: Vec<Axis> = s.chars().filter_map(Axis::from_char).collect();
        if chars.len() != 3 || s.chars().count() != 3 {
            return Err(format!("`{s}` is not a permutation of XYZ"));
        }
        RotationOrder::ALL
            .into_iter()
            .find(|o| o.axes() == [chars[0], chars[1], chars[2]])
            .ok_or_else(|| format!("`{s}` is not a permutation of XYZ"))
    }
}

impl fmt::Display for RotationOrder {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for a in self.axes() {
            write!(f, "{}", a.as_char().to_ascii_uppercase())?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum JointGroup {
    Global,
    Body,
    Hand,
    Jaw,
}

impl FromStr for JointGroup {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "global" => Ok(JointGroup::Global),
            "body" => Ok(JointGroup::Body),
            "hand" => Ok(JointGroup::Hand),
            "jaw" => Ok(JointGroup::Jaw),
            other => Err(format!("unknown group `{other}`")),
        }
    }
}

impl fmt::Display for JointGroup {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            JointGroup::Global => "global",
            JointGroup::Body => "body",
            JointGroup::Hand => "hand",
            JointGroup::Jaw => "jaw",
        })
    }
}

/// Degrees of freedom of a joint. Hinges carry their (unit) rotation axis.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Dof {
    One { axis: Vector3<f64> },
    Three,
}

impl Dof {
    pub fn count(&self) -> usize {
        match self {
            Dof::One { .. } => 1,
            Dof::Three => 3,
        }
    }

    /// Width of the joint's block in continuous space.
    pub fn continuous_width(&self) -> usize {
        2 * self.count()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct JointSpec {
    pub name: String,
    pub parent: Option<String>,
    pub offset: Vector3<f64>,
    pub dof: Dof,
    pub rotation_order: RotationOrder,
    pub group: JointGroup,
}

/// Where one joint's channels live in native and continuous space.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JointSlot {
    pub joint: usize,
    pub native: Range<usize>,
    /// `None` for jaw joints, which are not encoded.
    pub continuous: Option<Range<usize>>,
}

/// A validated skeleton. Immutable after construction.
#[derive(Debug, Clone, PartialEq)]
pub struct SkeletonSchema {
    name: String,
    version: u32,
    up_axis: Axis,
    joints: Vec<JointSpec>,
    parents: Vec<Option<usize>>,
    root: usize,
    fk_order: Vec<usize>,
    feet: Vec<usize>,
    slots: Vec<JointSlot>,
    native_dim: usize,
    continuous_dim: usize,
}

impl SkeletonSchema {
    /// The default 136/260 rig.
    pub fn mhr260() -> Self {
        load_schema(MHR260_DOCUMENT.as_bytes()).expect("built-in mhr260 schema is valid")
    }

    /// Three-joint toy chain (global, body and hand groups, one hinge).
    pub fn chain3() -> Self {
        load_schema(CHAIN3_DOCUMENT.as_bytes()).expect("built-in chain3 schema is valid")
    }

    /// Looks up a built-in schema by name.
    pub fn builtin(name: &str) -> Option<Self> {
        match name {
            "mhr260" => Some(Self::mhr260()),
            "chain3" => Some(Self::chain3()),
            _ => None,
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn version(&self) -> u32 {
        self.version
    }

    pub fn up_axis(&self) -> Axis {
        self.up_axis
    }

    pub fn joints(&self) -> &[JointSpec] {
        &self.joints
    }

    pub fn joint_count(&self) -> usize {
        self.joints.len()
    }

    pub fn joint_index(&self, name: &str) -> Option<usize> {
        self.joints.iter().position(|j| j.name == name)
    }

    pub fn parent(&self, joint: usize) -> Option<usize> {
        self.parents[joint]
    }

    pub fn root(&self) -> usize {
        self.root
    }

    /// Joint indices ordered so that every parent precedes its children.
    pub fn fk_order(&self) -> &[usize] {
        &self.fk_order
    }

    /// Joints used for foot-ground contact.
    pub fn feet(&self) -> &[usize] {
        &self.feet
    }

    /// Joint slots in canonical dimension order: root first, then the
    /// remaining joints in document order.
    pub fn slots(&self) -> &[JointSlot] {
        &self.slots
    }

    pub fn slot(&self, joint: usize) -> &JointSlot {
        self.slots
            .iter()
            .find(|s| s.joint == joint)
            .expect("every joint has a slot")
    }

    /// Root height along the up axis that puts the lowest foot of the zero
    /// pose on the ground plane.
    pub fn standing_height(&self) -> f64 {
        let up = self.up_axis.index();
        let lowest = self
            .feet
            .iter()
            .map(|&f| {
                let mut h = 0.0;
                let mut cur = Some(f);
                while let Some(j) = cur {
                    h += self.joints[j].offset[up];
                    cur = self.parents[j];
                }
                h
            })
            .fold(f64::INFINITY, f64::min);
        if lowest.is_finite() {
            -lowest
        } else {
            0.0
        }
    }

    pub fn native_pose_dim(&self) -> usize {
        self.native_dim
    }

    pub fn continuous_dim(&self) -> usize {
        self.continuous_dim
    }

    /// Euler DoF of all non-jaw joints, global included.
    pub fn active_rotation_dim(&self) -> usize {
        self.joints
            .iter()
            .filter(|j| j.group != JointGroup::Jaw)
            .map(|j| j.dof.count())
            .sum()
    }

    pub fn jaw_dofs(&self) -> usize {
        self.joints
            .iter()
            .filter(|j| j.group == JointGroup::Jaw)
            .map(|j| j.dof.count())
            .sum()
    }

    /// Native dims that must stay zero (jaw channels).
    pub fn jaw_native_dims(&self) -> Vec<usize> {
        self.slots
            .iter()
            .filter(|s| self.joints[s.joint].group == JointGroup::Jaw)
            .flat_map(|s| s.native.clone())
            .collect()
    }

    /// SHA-256 of the canonical rendering; binds motion files to schemas.
    pub fn hash(&self) -> [u8; 32] {
        let digest = Sha256::digest(self.to_document().as_bytes());
        let mut out = [0u8; 32];
        out.copy_from_slice(&digest);
        out
    }

    /// Canonical document. `load_schema(to_document())` reproduces `self`.
    pub fn to_document(&self) -> String {
        let mut out = String::new();
        out.push_str(&format!("version = {}\n", self.version));
        out.push_str(&format!("name = {}\n", self.name));
        out.push_str(&format!("up_axis = {}\n", self.up_axis.as_char()));
        if !self.feet.is_empty() {
            let names: Vec<&str> = self
                .feet
                .iter()
                .map(|&f| self.joints[f].name.as_str())
                .collect();
            out.push_str(&format!("feet = {}\n", names.join(" ")));
        }
        out.push_str("\n[joints]\n");
        for j in &self.joints {
            let (order, axis) = match j.dof {
                Dof::Three => (j.rotation_order.to_string(), "-".to_string()),
                Dof::One { axis } => ("-".to_string(), fmt_vec(&axis)),
            };
            out.push_str(&format!(
                "{} {} {} {} {} {} {}\n",
                j.name,
                j.parent.as_deref().unwrap_or("-"),
                fmt_vec(&j.offset),
                j.dof.count(),
                order,
                axis,
                j.group
            ));
        }
        out
    }
}

fn fmt_vec(v: &Vector3<f64>) -> String {
    format!("{},{},{}", v.x, v.y, v.z)
}

/// Parses and validates a schema document.
pub fn load_schema(document: &[u8]) -> Result<SkeletonSchema, SchemaError> {
    let text = std::str::from_utf8(document)
        .map_err(|e| parse_err(0, "document", format!("not valid UTF-8: {e}")))?;

    let mut version = None;
    let mut name = None;
    let mut up_axis = Axis::Y;
    let mut feet_line: Option<(usize, Vec<String>)> = None;
    let mut declared: Vec<(usize, &'static str, usize)> = Vec::new();
    let mut joints: Vec<(usize, JointSpec)> = Vec::new();
    let mut in_joints = false;

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        if line.starts_with('[') {
            if line == "[joints]" {
                in_joints = true;
                continue;
            }
            return Err(parse_err(
                line_no,
                "section",
                format!("unknown section `{line}`"),
            ));
        }
        if !in_joints {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| parse_err(line_no, "key", "expected `key = value`"))?;
            let key = key.trim();
            let value = value.trim();
            let parse_usize = |field: &str| {
                value
                    .parse::<usize>()
                    .map_err(|_| parse_err(line_no, field, format!("`{value}` is not an integer")))
            };
            match key {
                "version" => {
                    let v = value.parse::<u32>().map_err(|_| {
                        parse_err(line_no, "version", format!("`{value}` is not an integer"))
                    })?;
                    if v != 1 {
                        return Err(parse_err(
                            line_no,
                            "version",
                            format!("unsupported schema version {v}"),
                        ));
                    }
                    version = Some(v);
                }
                "name" => {
                    if value.is_empty() || value.contains(char::is_whitespace) {
                        return Err(parse_err(line_no, "name", "name must be a single token"));
                    }
                    name = Some(value.to_string());
                }
                "up_axis" => {
                    let mut chars = value.chars();
                    up_axis = match (chars.next().and_then(Axis::from_char), chars.next()) {
                        (Some(a), None) => a,
                        _ => {
                            return Err(parse_err(
                                line_no,
                                "up_axis",
                                format!("`{value}` is not one of x, y, z"),
                            ))
                        }
                    };
                }
                "feet" => {
                    feet_line = Some((
                        line_no,
                        value.split_whitespace().map(str::to_string).collect(),
                    ));
                }
                "native_pose_dim" => declared.push((line_no, "native_pose_dim", parse_usize(key)?)),
                "continuous_dim" => declared.push((line_no, "continuous_dim", parse_usize(key)?)),
                "active_rotation_dim" => {
                    declared.push((line_no, "active_rotation_dim", parse_usize(key)?))
                }
                other => return Err(parse_err(line_no, other, "unknown key")),
            }
        } else {
            joints.push((line_no, parse_joint_row(line_no, line)?));
        }
    }

    let version = version.ok_or_else(|| parse_err(0, "version", "missing mandatory field"))?;
    let name = name.ok_or_else(|| parse_err(0, "name", "missing mandatory field"))?;
    if joints.is_empty() {
        return Err(parse_err(0, "joints", "no joints declared"));
    }

    let mut index: HashMap<&str, usize> = HashMap::new();
    for (i, (line, j)) in joints.iter().enumerate() {
        if index.insert(j.name.as_str(), i).is_some() {
            return Err(parse_err(
                *line,
                "name",
                format!("duplicate joint `{}`", j.name),
            ));
        }
    }

    let mut parents = Vec::with_capacity(joints.len());
    let mut roots = Vec::new();
    for (i, (_, j)) in joints.iter().enumerate() {
        match &j.parent {
            None => {
                roots.push(i);
                parents.push(None);
            }
            Some(p) => match index.get(p.as_str()) {
                Some(&pi) => parents.push(Some(pi)),
                None => {
                    return Err(SchemaError::Topology(format!(
                        "joint `{}` references unknown parent `{p}`",
                        j.name
                    )))
                }
            },
        }
    }
    if roots.len() != 1 {
        return Err(SchemaError::Topology(format!(
            "expected exactly one root joint, found {}",
            roots.len()
        )));
    }
    let root = roots[0];

    // Breadth-first from the root; anything unreached sits on a cycle.
    let mut children: Vec<Vec<usize>> = vec![Vec::new(); joints.len()];
    for (i, p) in parents.iter().enumerate() {
        if let Some(p) = p {
            children[*p].push(i);
        }
    }
    let mut fk_order = vec![root];
    let mut cursor = 0;
    while cursor < fk_order.len() {
        let j = fk_order[cursor];
        fk_order.extend(children[j].iter().copied());
        cursor += 1;
    }
    if fk_order.len() != joints.len() {
        let stuck: Vec<&str> = (0..joints.len())
            .filter(|i| !fk_order.contains(i))
            .map(|i| joints[i].1.name.as_str())
            .collect();
        return Err(SchemaError::Topology(format!(
            "joints not reachable from the root (cycle): {}",
            stuck.join(", ")
        )));
    }

    for (i, (line, j)) in joints.iter().enumerate() {
        let is_root = i == root;
        match (is_root, j.group == JointGroup::Global) {
            (true, false) => {
                return Err(SchemaError::Topology(format!(
                    "root joint `{}` must be tagged global",
                    j.name
                )))
            }
            (false, true) => {
                return Err(SchemaError::Topology(format!(
                    "only the root may be tagged global, `{}` is not the root",
                    j.name
                )))
            }
            _ => {}
        }
        if is_root {
            if j.dof != Dof::Three {
                return Err(SchemaError::Dimension(format!(
                    "root joint `{}` must have 3 DoF",
                    j.name
                )));
            }
            if j.offset.norm() != 0.0 {
                return Err(parse_err(
                    *line,
                    "offset",
                    "root offset must be 0,0,0 (root channels carry the translation)",
                ));
            }
        }
    }

    let feet = match feet_line {
        None => Vec::new(),
        Some((line, names)) => names
            .iter()
            .map(|n| {
                index
                    .get(n.as_str())
                    .copied()
                    .ok_or_else(|| parse_err(line, "feet", format!("unknown joint `{n}`")))
            })
            .collect::<Result<Vec<_>, _>>()?,
    };

    let joints: Vec<JointSpec> = joints.into_iter().map(|(_, j)| j).collect();

    let mut slots = Vec::with_capacity(joints.len());
    let mut native_cursor = ROOT_CHANNELS;
    let mut cont_cursor = ROOT_CHANNELS;
    let canonical = std::iter::once(root).chain((0..joints.len()).filter(|&i| i != root));
    for i in canonical {
        let j = &joints[i];
        let n = j.dof.count();
        let native = native_cursor..native_cursor + n;
        native_cursor += n;
        let continuous = if j.group == JointGroup::Jaw {
            None
        } else {
            let w = j.dof.continuous_width();
            let r = cont_cursor..cont_cursor + w;
            cont_cursor += w;
            Some(r)
        };
        slots.push(JointSlot {
            joint: i,
            native,
            continuous,
        });
    }

    let schema = SkeletonSchema {
        name,
        version,
        up_axis,
        joints,
        parents,
        root,
        fk_order,
        feet,
        slots,
        native_dim: native_cursor,
        continuous_dim: cont_cursor,
    };

    for (line, field, value) in declared {
        let actual = match field {
            "native_pose_dim" => schema.native_pose_dim(),
            "continuous_dim" => schema.continuous_dim(),
            _ => schema.active_rotation_dim(),
        };
        if actual != value {
            return Err(SchemaError::Dimension(format!(
                "line {line}: declared {field} = {value} but the joint table gives {actual}"
            )));
        }
    }

    Ok(schema)
}

fn parse_joint_row(line_no: usize, line: &str) -> Result<JointSpec, SchemaError> {
    let cols: Vec<&str> = line.split_whitespace().collect();
    if cols.len() != 7 {
        return Err(parse_err(
            line_no,
            "joint",
            format!(
                "expected 7 columns (name parent offset dof order axis group), found {}",
                cols.len()
            ),
        ));
    }
    let name = cols[0].to_string();
    let parent = (cols[1] != "-").then(|| cols[1].to_string());
    let offset = parse_vec3(cols[2]).map_err(|m| parse_err(line_no, "offset", m))?;
    let order_col = cols[4];
    let axis_col = cols[5];
    let (dof, rotation_order) = match cols[3] {
        "3" => {
            if axis_col != "-" {
                return Err(parse_err(
                    line_no,
                    "axis",
                    "3-DoF joints take no axis, use `-`",
                ));
            }
            let order = order_col
                .parse::<RotationOrder>()
                .map_err(|m| parse_err(line_no, "order", m))?;
            (Dof::Three, order)
        }
        "1" => {
            let axis = parse_vec3(axis_col).map_err(|m| parse_err(line_no, "axis", m))?;
            if (axis.norm() - 1.0).abs() > 1e-9 {
                return Err(parse_err(
                    line_no,
                    "axis",
                    "hinge axis must be a unit vector",
                ));
            }
            if order_col != "-" {
                order_col
                    .parse::<RotationOrder>()
                    .map_err(|m| parse_err(line_no, "order", m))?;
            }
            (Dof::One { axis }, RotationOrder::Xyz)
        }
        other => {
            return Err(parse_err(
                line_no,
                "dof",
                format!("dof must be 1 or 3, found `{other}`"),
            ))
        }
    };
    let group = cols[6]
        .parse::<JointGroup>()
        .map_err(|m| parse_err(line_no, "group", m))?;
    Ok(JointSpec {
        name,
        parent,
        offset,
        dof,
        rotation_order,
        group,
    })
}

fn parse_vec3(s: &str) -> Result<Vector3<f64>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != 3 {
        return Err(format!("`{s}` is not a comma-separated 3-vector"));
    }
    let mut v = Vector3::zeros();
    for (i, p) in parts.iter().enumerate() {
        v[i] = p
            .trim()
            .parse::<f64>()
            .ok()
            .filter(|x| x.is_finite())
            .ok_or_else(|| format!("`{p}` is not a finite number"))?;
    }
    Ok(v)
}

/// Which parameterization a layout refers to.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Space {
    Native,
    Continuous,
}

/// Anatomical index sets over one pose frame.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DimLayout {
    pub space: Space,
    pub dim: usize,
    pub root_translation: Vec<usize>,
    pub global_rotation: Vec<usize>,
    pub body_rotation: Vec<usize>,
    pub hand_rotation: Vec<usize>,
    /// Always empty in continuous space.
    pub jaw: Vec<usize>,
}

impl DimLayout {
    pub fn rotation_dims(&self) -> impl Iterator<Item = usize> + '_ {
        self.global_rotation
            .iter()
            .chain(&self.body_rotation)
            .chain(&self.hand_rotation)
            .copied()
    }

    /// Checks that the sets are pairwise disjoint and cover `0..dim`.
    pub fn is_partition(&self) -> bool {
        let mut seen = vec![false; self.dim];
        let all = self
            .root_translation
            .iter()
            .chain(self.rotation_dims().collect::<Vec<_>>().iter())
            .chain(&self.jaw)
            .copied()
            .collect::<Vec<_>>();
        for d in all {
            if d >= self.dim || seen[d] {
                return false;
            }
            seen[d] = true;
        }
        seen.into_iter().all(|s| s)
    }
}

/// Index sets for root translation and the three rotation groups.
pub fn dim_layout(schema: &SkeletonSchema, space: Space) -> DimLayout {
    let mut layout = DimLayout {
        space,
        dim: match space {
            Space::Native => schema.native_pose_dim(),
            Space::Continuous => schema.continuous_dim(),
        },
        root_translation: (0..ROOT_CHANNELS).collect(),
        global_rotation: Vec::new(),
        body_rotation: Vec::new(),
        hand_rotation: Vec::new(),
        jaw: Vec::new(),
    };
    for slot in schema.slots() {
        let range = match space {
            Space::Native => Some(slot.native.clone()),
            Space::Continuous => slot.continuous.clone(),
        };
        let Some(range) = range else { continue };
        let target = match schema.joints[slot.joint].group {
            JointGroup::Global => &mut layout.global_rotation,
            JointGroup::Body => &mut layout.body_rotation,
            JointGroup::Hand => &mut layout.hand_rotation,
            JointGroup::Jaw => &mut layout.jaw,
        };
        target.extend(range);
    }
    layout
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "version = 1\nname = minimal\n[joints]\nroot - 0,0,0 3 XYZ - global\nchild root 0,1,0 1 - 1,0,0 hand\n";

    #[test]
    fn mhr260_dimension_accounting() {
        let s = SkeletonSchema::mhr260();
        // 6 root + 3 global + 36*3 local + 16 hinges + 3 jaw
        assert_eq!(s.native_pose_dim(), 6 + 3 + 36 * 3 + 16 + 3);
        assert_eq!(s.native_pose_dim(), 136);
        assert_eq!(s.active_rotation_dim(), 127);
        assert_eq!(s.continuous_dim(), 6 + 2 * (3 + 36 * 3 + 16));
        assert_eq!(s.continuous_dim(), 260);
        assert_eq!(s.jaw_dofs(), 3);
        let three = s.joints().iter().filter(|j| j.dof == Dof::Three).count();
        let one = s.joints().len() - three;
        assert_eq!((three, one), (1 + 36 + 1, 16));
    }

    #[test]
    fn minimal_two_joint() {
        let s = load_schema(MINIMAL.as_bytes()).unwrap();
        assert_eq!(s.native_pose_dim(), 10);
        assert_eq!(s.continuous_dim(), 14);
        let layout = dim_layout(&s, Space::Continuous);
        assert_eq!(layout.hand_rotation, vec![12, 13]);
        assert_eq!(layout.global_rotation, (6..12).collect::<Vec<_>>());
        assert!(layout.is_partition());
    }

    #[test]
    fn self_parent_is_topology_error() {
        let doc = "version = 1\nname = bad\n[joints]\nroot - 0,0,0 3 XYZ - global\nloop loop 0,1,0 3 XYZ - body\n";
        assert!(matches!(
            load_schema(doc.as_bytes()),
            Err(SchemaError::Topology(_))
        ));
    }

    #[test]
    fn two_node_cycle_and_multiple_roots() {
        let cycle = "version = 1\nname = bad\n[joints]\nroot - 0,0,0 3 XYZ - global\na b 0,1,0 3 XYZ - body\nb a 0,1,0 3 XYZ - body\n";
        assert!(matches!(
            load_schema(cycle.as_bytes()),
            Err(SchemaError::Topology(_))
        ));
        let two_roots = "version = 1\nname = bad\n[joints]\nroot - 0,0,0 3 XYZ - global\nother - 0,0,0 3 XYZ - body\n";
        assert!(matches!(
            load_schema(two_roots.as_bytes()),
            Err(SchemaError::Topology(_))
        ));
        let orphan = "version = 1\nname = bad\n[joints]\nroot - 0,0,0 3 XYZ - global\na ghost 0,1,0 3 XYZ - body\n";
        assert!(matches!(
            load_schema(orphan.as_bytes()),
            Err(SchemaError::Topology(_))
        ));
    }

    #[test]
    fn parse_errors_carry_locations() {
        let doc = "version = 1\nname = bad\n[joints]\nroot - 0,0,0 3 XYZ - global\nchild root 0,1 3 XYZ - body\n";
        match load_schema(doc.as_bytes()) {
            Err(SchemaError::Parse { line, field, .. }) => {
                assert_eq!(line, 5);
                assert_eq!(field, "offset");
            }
            other => panic!("unexpected {other:?}"),
        }
        let no_version = "name = x\n[joints]\nroot - 0,0,0 3 XYZ - global\n";
        assert!(matches!(
            load_schema(no_version.as_bytes()),
            Err(SchemaError::Parse { field, .. }) if field == "version"
        ));
        let bad_dof = "version = 1\nname = x\n[joints]\nroot - 0,0,0 2 XYZ - global\n";
        assert!(matches!(
            load_schema(bad_dof.as_bytes()),
            Err(SchemaError::Parse { field, .. }) if field == "dof"
        ));
    }

    #[test]
    fn declared_dims_are_checked() {
        let doc = format!("{}native_pose_dim = 11\n", "version = 1\nname = m\n");
        let doc = format!(
            "{doc}[joints]\nroot - 0,0,0 3 XYZ - global\nchild root 0,1,0 1 - 1,0,0 hand\n"
        );
        assert!(matches!(
            load_schema(doc.as_bytes()),
            Err(SchemaError::Dimension(_))
        ));
    }

    #[test]
    fn canonical_document_round_trips() {
        for s in [SkeletonSchema::mhr260(), SkeletonSchema::chain3()] {
            let again = load_schema(s.to_document().as_bytes()).unwrap();
            assert_eq!(again, s);
            assert_eq!(again.hash(), s.hash());
        }
        assert_ne!(
            SkeletonSchema::mhr260().hash(),
            SkeletonSchema::chain3().hash()
        );
    }

    #[test]
    fn mhr260_layout_partitions_both_spaces() {
        let s = SkeletonSchema::mhr260();
        let c = dim_layout(&s, Space::Continuous);
        assert!(c.is_partition());
        assert_eq!(c.root_translation, (0..6).collect::<Vec<_>>());
        assert_eq!(c.rotation_dims().count(), 254);
        assert!(c.jaw.is_empty());
        let n = dim_layout(&s, Space::Native);
        assert!(n.is_partition());
        assert_eq!(n.jaw.len(), 3);
        assert_eq!(n.root_translation, (0..6).collect::<Vec<_>>());
        assert_eq!(n.global_rotation, vec![6, 7, 8]);
    }

    #[test]
    fn fk_order_puts_parents_first() {
        let s = SkeletonSchema::mhr260();
        let mut pos = vec![0; s.joint_count()];
        for (k, &j) in s.fk_order().iter().enumerate() {
            pos[j] = k;
        }
        for j in 0..s.joint_count() {
            if let Some(p) = s.parent(j) {
                assert!(pos[p] < pos[j]);
            }
        }
    }

    #[test]
    fn rotation_order_parsing() {
        for o in RotationOrder::ALL {
            assert_eq!(o.to_string().parse::<RotationOrder>().unwrap(), o);
        }
        assert!("XXY".parse::<RotationOrder>().is_err());
        assert!("XY".parse::<RotationOrder>().is_err());
    }
}
