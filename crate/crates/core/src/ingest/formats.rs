//! Whitespace-separated text formats for maps, queries, results and ground
//! truth. `#` starts a comment; blank lines are ignored. Writers emit one
//! canonical form (ascending ids, shortest round-trip float formatting), so
//! loading and re-saving a canonical file reproduces it byte for byte.

use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use nalgebra::Vector3;

use crate::descriptor::{GlobalDescriptor, RealDescriptor};
use crate::error::{Error, Result};
use crate::map::{FrameId, FrameRecord, KeypointGeometry, LandmarkId, LandmarkRecord, MapDatabase, QueryKeypoint};
use crate::pose::{CameraIntrinsics, CameraPose, LocalizationStatus};
use crate::rtree::PerturbationModel;

struct Line<'a> {
    number: usize,
    tokens: std::str::SplitWhitespace<'a>,
    path: &'a Path,
}

impl<'a> Line<'a> {
    fn err(&self, message: impl Into<String>) -> Error {
        Error::parse(self.path, self.number, message)
    }

    fn next_token(&mut self, what: &str) -> Result<&'a str> {
        self.tokens
            .next()
            .ok_or_else(|| Error::parse(self.path, self.number, format!("missing {what}")))
    }

    fn parse<T: FromStr>(&mut self, what: &str) -> Result<T> {
        let tok = self.next_token(what)?;
        tok.parse()
            .map_err(|_| Error::parse(self.path, self.number, format!("invalid {what} {tok:?}")))
    }

    fn float(&mut self, what: &str) -> Result<f64> {
        let v: f64 = self.parse(what)?;
        if !v.is_finite() {
            return Err(self.err(format!("{what} is not finite")));
        }
        Ok(v)
    }

    fn floats(&mut self, n: usize, what: &str) -> Result<Vec<f64>> {
        (0..n).map(|_| self.float(what)).collect()
    }

    fn finish(&mut self) -> Result<()> {
        match self.tokens.next() {
            None => Ok(()),
            Some(tok) => Err(self.err(format!("unexpected trailing token {tok:?}"))),
        }
    }
}

fn lines<'a>(text: &'a str, path: &'a Path) -> impl Iterator<Item = Line<'a>> {
    text.lines().enumerate().filter_map(move |(i, raw)| {
        let content = raw.split('#').next().unwrap_or("");
        (!content.trim().is_empty()).then(|| Line {
            number: i + 1,
            tokens: content.split_whitespace(),
            path,
        })
    })
}

fn read(path: &Path) -> Result<String> {
    std::fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn push_f64(out: &mut String, v: f64) {
    write!(out, " {v:?}").unwrap();
}

fn dimension(line: &mut Line<'_>, what: &str) -> Result<usize> {
    let d: usize = line.parse(what)?;
    if d == 0 {
        return Err(line.err(format!("{what} must be positive")));
    }
    Ok(d)
}

pub fn parse_landmarks(text: &str, path: &Path) -> Result<Vec<LandmarkRecord>> {
    let mut out = Vec::new();
    for mut line in lines(text, path) {
        let id: u32 = line.parse("landmark id")?;
        let p = line.floats(3, "coordinate")?;
        let ndesc: usize = line.parse("descriptor count")?;
        let dim = dimension(&mut line, "descriptor dimension")?;
        let mut descriptors = Vec::with_capacity(ndesc);
        for _ in 0..ndesc {
            let values = line.floats(dim, "descriptor value")?;
            descriptors.push(RealDescriptor::new(values).map_err(|e| line.err(e.to_string()))?);
        }
        line.finish()?;
        out.push(LandmarkRecord::new(LandmarkId(id), Vector3::new(p[0], p[1], p[2]), descriptors));
    }
    Ok(out)
}

pub fn parse_frames(text: &str, path: &Path) -> Result<Vec<FrameRecord>> {
    let mut out = Vec::new();
    for mut line in lines(text, path) {
        let id: u32 = line.parse("frame id")?;
        let dim = dimension(&mut line, "global descriptor dimension")?;
        let values = line.floats(dim, "global descriptor value")?;
        let global_descriptor = GlobalDescriptor::new(values).map_err(|e| line.err(e.to_string()))?;
        let nvis: usize = line.parse("visible landmark count")?;
        let mut visible_landmarks = std::collections::BTreeSet::new();
        for _ in 0..nvis {
            let lid: u32 = line.parse("landmark id")?;
            if !visible_landmarks.insert(LandmarkId(lid)) {
                return Err(line.err(format!("landmark {lid} listed twice")));
            }
        }
        line.finish()?;
        out.push(FrameRecord {
            id: FrameId(id),
            global_descriptor,
            visible_landmarks,
        });
    }
    Ok(out)
}

pub fn load_map(landmarks_path: &Path, frames_path: &Path) -> Result<MapDatabase> {
    let landmarks = parse_landmarks(&read(landmarks_path)?, landmarks_path)?;
    let frames = parse_frames(&read(frames_path)?, frames_path)?;
    MapDatabase::new(landmarks, frames)
}

pub fn format_landmarks(map: &MapDatabase) -> String {
    let mut out = String::new();
    for l in map.landmarks() {
        write!(out, "{}", l.id).unwrap();
        for v in l.position.iter() {
            push_f64(&mut out, *v);
        }
        write!(out, " {} {}", l.descriptors.len(), map.local_dim()).unwrap();
        for d in &l.descriptors {
            for v in d.real().values() {
                push_f64(&mut out, *v);
            }
        }
        out.push('\n');
    }
    out
}

pub fn format_frames(map: &MapDatabase) -> String {
    let mut out = String::new();
    for f in map.frames() {
        write!(out, "{} {}", f.id, f.global_descriptor.dim()).unwrap();
        for v in f.global_descriptor.values() {
            push_f64(&mut out, *v);
        }
        write!(out, " {}", f.visible_landmarks.len()).unwrap();
        for l in &f.visible_landmarks {
            write!(out, " {l}").unwrap();
        }
        out.push('\n');
    }
    out
}

pub fn save_map(map: &MapDatabase, landmarks_path: &Path, frames_path: &Path) -> Result<()> {
    write(landmarks_path, &format_landmarks(map))?;
    write(frames_path, &format_frames(map))
}

/// One query image: its global descriptor and detected keypoints.
#[derive(Clone, Debug, PartialEq)]
pub struct QueryImage {
    pub id: u64,
    pub global: GlobalDescriptor,
    pub keypoints: Vec<QueryKeypoint>,
}

/// Contents of a query file. An empty file has no intrinsics and no queries.
#[derive(Clone, Debug, PartialEq, Default)]
pub struct QuerySet {
    pub intrinsics: Option<CameraIntrinsics>,
    pub queries: Vec<QueryImage>,
}

/// Query file grammar:
///
/// ```text
/// fx fy cx cy [k1 k2]
/// query <id> <G> g0 .. g(G-1)
/// u v orientation scale D v0 .. v(D-1)     one line per keypoint
/// query ...
/// ```
pub fn parse_queries(text: &str, path: &Path) -> Result<QuerySet> {
    let mut set = QuerySet::default();
    for mut line in lines(text, path) {
        if set.intrinsics.is_none() {
            let values = line.floats(4, "intrinsic")?;
            let rest: Vec<&str> = line.tokens.by_ref().collect();
            let (k1, k2) = match rest.as_slice() {
                [] => (0.0, 0.0),
                [a, b] => {
                    let parse = |s: &str| {
                        s.parse::<f64>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| line.err(format!("invalid distortion coefficient {s:?}")))
                    };
                    (parse(a)?, parse(b)?)
                }
                _ => return Err(line.err("intrinsics line takes 4 or 6 values")),
            };
            let k = CameraIntrinsics::with_distortion(values[0], values[1], values[2], values[3], k1, k2)
                .map_err(|e| line.err(e.to_string()))?;
            set.intrinsics = Some(k);
            continue;
        }
        let mut peek = line.tokens.clone();
        if peek.next() == Some("query") {
            line.next_token("query keyword")?;
            let id: u64 = line.parse("query id")?;
            if set.queries.iter().any(|q| q.id == id) {
                return Err(line.err(format!("duplicate query id {id}")));
            }
            let dim = dimension(&mut line, "global descriptor dimension")?;
            let values = line.floats(dim, "global descriptor value")?;
            let global = GlobalDescriptor::new(values).map_err(|e| line.err(e.to_string()))?;
            line.finish()?;
            set.queries.push(QueryImage {
                id,
                global,
                keypoints: Vec::new(),
            });
            continue;
        }
        let Some(query) = set.queries.last_mut() else {
            return Err(line.err("keypoint line before the first query header"));
        };
        let g = line.floats(4, "keypoint geometry")?;
        let dim = dimension(&mut line, "descriptor dimension")?;
        let values = line.floats(dim, "descriptor value")?;
        let descriptor = RealDescriptor::new(values).map_err(|e| line.err(e.to_string()))?;
        let kp = QueryKeypoint::new(
            KeypointGeometry {
                pixel: [g[0], g[1]],
                orientation: g[2],
                scale: g[3],
            },
            descriptor,
        )
        .map_err(|e| line.err(e.to_string()))?;
        line.finish()?;
        query.keypoints.push(kp);
    }
    Ok(set)
}

pub fn format_queries(set: &QuerySet) -> String {
    let mut out = String::new();
    let Some(k) = set.intrinsics else {
        return out;
    };
    write!(out, "{:?} {:?} {:?} {:?} {:?} {:?}", k.fx, k.fy, k.cx, k.cy, k.k1, k.k2).unwrap();
    out.push('\n');
    for q in &set.queries {
        write!(out, "query {} {}", q.id, q.global.dim()).unwrap();
        for v in q.global.values() {
            push_f64(&mut out, *v);
        }
        out.push('\n');
        for kp in &q.keypoints {
            let g = &kp.geometry;
            write!(out, "{:?} {:?} {:?} {:?} {}", g.pixel[0], g.pixel[1], g.orientation, g.scale, kp.descriptor.dim())
                .unwrap();
            for v in kp.descriptor.real().values() {
                push_f64(&mut out, *v);
            }
            out.push('\n');
        }
    }
    out
}

pub fn load_queries(path: &Path) -> Result<QuerySet> {
    parse_queries(&read(path)?, path)
}

pub fn save_queries(set: &QuerySet, path: &Path) -> Result<()> {
    if !set.queries.is_empty() && set.intrinsics.is_none() {
        return Err(Error::InvalidInput("queries without intrinsics cannot be saved".into()));
    }
    write(path, &format_queries(set))
}

/// A pose as stored in text files: translation and `(w, x, y, z)` quaternion
/// kept verbatim so that files round-trip exactly.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PoseRecord {
    pub translation: [f64; 3],
    pub quaternion: [f64; 4],
}

impl PoseRecord {
    pub const IDENTITY: PoseRecord = PoseRecord {
        translation: [0.0; 3],
        quaternion: [1.0, 0.0, 0.0, 0.0],
    };

    pub fn from_pose(pose: &CameraPose) -> Self {
        let t = pose.translation();
        Self {
            translation: [t.x, t.y, t.z],
            quaternion: pose.quaternion(),
        }
    }

    pub fn to_pose(&self) -> Result<CameraPose> {
        let [x, y, z] = self.translation;
        CameraPose::from_quaternion(self.quaternion, Vector3::new(x, y, z))
    }

    fn parse(line: &mut Line<'_>) -> Result<Self> {
        let t = line.floats(3, "translation")?;
        let q = line.floats(4, "quaternion")?;
        let rec = Self {
            translation: [t[0], t[1], t[2]],
            quaternion: [q[0], q[1], q[2], q[3]],
        };
        rec.to_pose().map_err(|e| line.err(e.to_string()))?;
        Ok(rec)
    }

    fn push(&self, out: &mut String) {
        for v in self.translation.iter().chain(&self.quaternion) {
            push_f64(out, *v);
        }
    }
}

/// One line of a result file. Failed queries carry the identity pose and
/// zero inliers.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ResultRecord {
    pub query_id: u64,
    pub status: LocalizationStatus,
    pub pose: PoseRecord,
    pub inliers: usize,
}

impl ResultRecord {
    /// The estimated pose, or `None` for failed queries.
    pub fn estimate(&self) -> Result<Option<CameraPose>> {
        match self.status {
            LocalizationStatus::Ok => self.pose.to_pose().map(Some),
            _ => Ok(None),
        }
    }
}

pub fn parse_results(text: &str, path: &Path) -> Result<Vec<ResultRecord>> {
    let mut out: Vec<ResultRecord> = Vec::new();
    for mut line in lines(text, path) {
        let query_id: u64 = line.parse("query id")?;
        let status_tok = line.next_token("status")?;
        let status: LocalizationStatus = status_tok.parse().map_err(|e: Error| line.err(e.to_string()))?;
        let pose = PoseRecord::parse(&mut line)?;
        let inliers: usize = line.parse("inlier count")?;
        line.finish()?;
        if out.iter().any(|r| r.query_id == query_id) {
            return Err(line.err(format!("duplicate query id {query_id}")));
        }
        out.push(ResultRecord {
            query_id,
            status,
            pose,
            inliers,
        });
    }
    Ok(out)
}

pub fn format_results(results: &[ResultRecord]) -> String {
    let mut out = String::new();
    for r in results {
        write!(out, "{} {}", r.query_id, r.status.as_str()).unwrap();
        r.pose.push(&mut out);
        writeln!(out, " {}", r.inliers).unwrap();
    }
    out
}

pub fn load_results(path: &Path) -> Result<Vec<ResultRecord>> {
    parse_results(&read(path)?, path)
}

pub fn save_results(results: &[ResultRecord], path: &Path) -> Result<()> {
    write(path, &format_results(results))
}

/// Ground-truth file lines: `query_id tx ty tz qw qx qy qz`.
pub fn parse_ground_truth(text: &str, path: &Path) -> Result<Vec<(u64, PoseRecord)>> {
    let mut out: Vec<(u64, PoseRecord)> = Vec::new();
    for mut line in lines(text, path) {
        let id: u64 = line.parse("query id")?;
        let pose = PoseRecord::parse(&mut line)?;
        line.finish()?;
        if out.iter().any(|(q, _)| *q == id) {
            return Err(line.err(format!("duplicate query id {id}")));
        }
        out.push((id, pose));
    }
    Ok(out)
}

pub fn format_ground_truth(poses: &[(u64, PoseRecord)]) -> String {
    let mut out = String::new();
    for (id, pose) in poses {
        write!(out, "{id}").unwrap();
        pose.push(&mut out);
        out.push('\n');
    }
    out
}

pub fn load_ground_truth(path: &Path) -> Result<Vec<(u64, PoseRecord)>> {
    parse_ground_truth(&read(path)?, path)
}

pub fn save_ground_truth(poses: &[(u64, PoseRecord)], path: &Path) -> Result<()> {
    write(path, &format_ground_truth(poses))
}

/// Model sidecar: a `mu <value>` line and a `sigma <value>` line.
pub fn parse_model(text: &str, path: &Path) -> Result<PerturbationModel> {
    let (mut mu, mut sigma) = (None, None);
    let mut last = 0;
    for mut line in lines(text, path) {
        last = line.number;
        let key = line.next_token("key")?;
        let slot = match key {
            "mu" => &mut mu,
            "sigma" => &mut sigma,
            other => return Err(line.err(format!("unknown model key {other:?}"))),
        };
        if slot.is_some() {
            return Err(line.err(format!("duplicate {key}")));
        }
        *slot = Some(line.float(key)?);
        line.finish()?;
    }
    match (mu, sigma) {
        (Some(mu), Some(sigma)) => PerturbationModel::new(mu, sigma).map_err(|e| Error::parse(path, last, e.to_string())),
        _ => Err(Error::parse(path, last, "model needs both mu and sigma")),
    }
}

pub fn format_model(model: &PerturbationModel) -> String {
    format!("mu {:?}\nsigma {:?}\n", model.mu(), model.sigma())
}

pub fn load_model(path: &Path) -> Result<PerturbationModel> {
    parse_model(&read(path)?, path)
}

pub fn save_model(model: &PerturbationModel, path: &Path) -> Result<()> {
    write(path, &format_model(model))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn p() -> &'static Path {
        Path::new("test.txt")
    }

    const LANDMARKS: &str = "# id x y z ndesc D values\n7 1.0 2.0 3.0 1 2 0.6 0.8\n";
    const FRAMES: &str = "3 2 1.0 0.0 1 7 # one frame\n";

    fn tiny_map() -> MapDatabase {
        MapDatabase::new(parse_landmarks(LANDMARKS, p()).unwrap(), parse_frames(FRAMES, p()).unwrap()).unwrap()
    }

    #[test]
    fn minimal_fixture_loads() {
        let map = tiny_map();
        assert_eq!(map.landmarks().len(), 1);
        let l = map.landmark(LandmarkId(7)).unwrap();
        assert_eq!(l.position, Vector3::new(1.0, 2.0, 3.0));
        assert!(l.observing_frames.contains(&FrameId(3)));
        assert_eq!(format_landmarks(&map), "7 1.0 2.0 3.0 1 2 0.6 0.8\n");
        assert_eq!(format_frames(&map), "3 2 1.0 0.0 1 7\n");
    }

    #[test]
    fn unknown_landmark_is_named() {
        let frames = parse_frames("3 2 1.0 0.0 2 7 99\n", p()).unwrap();
        let err = MapDatabase::new(parse_landmarks(LANDMARKS, p()).unwrap(), frames).unwrap_err();
        match err {
            Error::Integrity { ids, message } => {
                assert_eq!(ids, vec![99]);
                assert!(message.contains("unknown") || message.contains("99"), "{message}");
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_line_numbers() {
        let text = "# header\n\n1 0 0 0 1 2 0.6 0.8\n2 0 0 x 1 2 0.6 0.8\n";
        match parse_landmarks(text, p()) {
            Err(Error::Parse { line, message, .. }) => {
                assert_eq!(line, 4);
                assert!(message.contains("coordinate"));
            }
            other => panic!("{other:?}"),
        }
        assert!(matches!(parse_landmarks("1 0 0 0 1 2 0.6\n", p()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_landmarks("1 0 0 0 1 2 0.6 0.8 5\n", p()), Err(Error::Parse { line: 1, .. })));
        // norm far from one is rejected at parse time
        assert!(matches!(parse_landmarks("1 0 0 0 1 2 3 4\n", p()), Err(Error::Parse { line: 1, .. })));
        assert!(matches!(parse_frames("1 2 1 0 2 5 5\n", p()), Err(Error::Parse { line: 1, .. })));
    }

    #[test]
    fn queries_round_trip() {
        let text = "500.0 500.0 320.0 240.0\nquery 4 2 0.0 1.0\n10.5 20.25 0.3 2.0 2 0.6 -0.8\nquery 9 2 1.0 0.0\n";
        let set = parse_queries(text, p()).unwrap();
        assert_eq!(set.queries.len(), 2);
        assert_eq!(set.queries[0].keypoints.len(), 1);
        assert!(set.queries[1].keypoints.is_empty());
        let canonical = format_queries(&set);
        assert!(canonical.starts_with("500.0 500.0 320.0 240.0 0.0 0.0\n"));
        assert_eq!(format_queries(&parse_queries(&canonical, p()).unwrap()), canonical);

        assert_eq!(parse_queries("", p()).unwrap(), QuerySet::default());
        assert!(parse_queries("1 1 0 0\n1 2 0 1 2 0.6 0.8\n", p()).is_err());
        assert!(parse_queries("1 1 0 0 0.1\n", p()).is_err());
    }

    #[test]
    fn results_and_ground_truth_round_trip() {
        let text = "1 ok 0.1 0.2 0.3 1.0 0.0 0.0 0.0 57\n2 ransac_failed 0.0 0.0 0.0 1.0 0.0 0.0 0.0 0\n";
        let res = parse_results(text, p()).unwrap();
        assert_eq!(format_results(&res), text);
        assert!(res[0].estimate().unwrap().is_some());
        assert!(res[1].estimate().unwrap().is_none());
        assert!(parse_results("1 maybe 0 0 0 1 0 0 0 0\n", p()).is_err());
        assert!(parse_results(&format!("{text}1 ok 0 0 0 1 0 0 0 5\n"), p()).is_err());

        let gt = "5 1.5 -2.0 0.25 0.5 0.5 0.5 0.5\n";
        assert_eq!(format_ground_truth(&parse_ground_truth(gt, p()).unwrap()), gt);
        assert!(parse_ground_truth("5 0 0 0 0 0 0 0\n", p()).is_err());
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_map(Path::new("/nonexistent/l.txt"), Path::new("/nonexistent/f.txt")).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn model_round_trip_and_errors() {
        let m = PerturbationModel::new(0.0123, 0.0456).unwrap();
        let text = format_model(&m);
        assert_eq!(parse_model(&text, p()).unwrap(), m);
        assert!(parse_model("mu 0.1\n", p()).is_err());
        assert!(parse_model("mu 0.1\nsigma -1\n", p()).is_err());
        assert!(parse_model("mu 0.1\nmu 0.2\nsigma 1\n", p()).is_err());
    }
}
