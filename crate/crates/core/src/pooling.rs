//! Max pooling of per-scale sparse codes and assembly of the final scene
//! representation.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::coding::SparseCodeMatrix;
use crate::error::{Error, Result};
use crate::features::{l2_normalize, FeatureVector, SourceTag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PoolingMode {
    /// `f_j = max_i |X_ij|`
    #[default]
    Absolute,
    /// `f_j = max_i X_ij`, counting implicit zeros.
    Signed,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PooledRepresentation {
    pub values: Vec<f64>,
    pub scale_id: u32,
    pub source: SourceTag,
}

/// Column-wise maximum over the rows of `codes`.
pub fn max_pool(codes: &SparseCodeMatrix, mode: PoolingMode) -> Result<Vec<f64>> {
    if codes.is_empty() {
        return Err(Error::InvalidArgument("cannot pool an empty code matrix".into()));
    }
    let mut f = vec![0.0; codes.columns()];
    match mode {
        PoolingMode::Absolute => {
            for row in codes.rows() {
                for (j, v) in row.iter() {
                    f[j] = f64::max(f[j], v.abs());
                }
            }
        }
        PoolingMode::Signed => {
            let mut best = vec![f64::NEG_INFINITY; codes.columns()];
            let mut nnz = vec![0usize; codes.columns()];
            for row in codes.rows() {
                for (j, v) in row.iter() {
                    best[j] = best[j].max(v);
                    nnz[j] += 1;
                }
            }
            for j in 0..f.len() {
                f[j] = if nnz[j] == codes.len() { best[j] } else { best[j].max(0.0) };
            }
        }
    }
    Ok(f)
}

/// Pools one scale's codes into a tagged vector.
pub fn pool_scale(codes: &SparseCodeMatrix, mode: PoolingMode, scale_id: u32, source: SourceTag) -> Result<PooledRepresentation> {
    Ok(PooledRepresentation {
        values: max_pool(codes, mode)?,
        scale_id,
        source,
    })
}

/// Which part of a scene representation a segment holds.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SegmentKind {
    pub source: SourceTag,
    /// 0 for the global segment.
    pub scale_id: u32,
}

impl SegmentKind {
    pub const GLOBAL: SegmentKind = SegmentKind {
        source: SourceTag::Global,
        scale_id: 0,
    };

    pub fn name(&self) -> String {
        match self.source {
            SourceTag::Global => "global".to_string(),
            s => format!("{s}_scale{}", self.scale_id),
        }
    }

    pub fn is_local(&self) -> bool {
        self.source != SourceTag::Global
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Segment {
    pub kind: SegmentKind,
    pub offset: usize,
    pub len: usize,
}

/// Ordered segment table of a scene representation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Layout {
    pub segments: Vec<Segment>,
}

impl Layout {
    /// Global segment first, then every local source (structure before
    /// object) with its scales in increasing order.
    pub fn new(global_dim: usize, local_dims: &[(SourceTag, usize)], scale_ids: &[u32]) -> Self {
        let mut segments = vec![Segment {
            kind: SegmentKind::GLOBAL,
            offset: 0,
            len: global_dim,
        }];
        let mut offset = global_dim;
        for &(source, len) in local_dims {
            for &scale_id in scale_ids {
                segments.push(Segment {
                    kind: SegmentKind { source, scale_id },
                    offset,
                    len,
                });
                offset += len;
            }
        }
        Layout { segments }
    }

    pub fn total_len(&self) -> usize {
        self.segments.last().map_or(0, |s| s.offset + s.len)
    }

    pub fn find(&self, kind: SegmentKind) -> Option<&Segment> {
        self.segments.iter().find(|s| s.kind == kind)
    }

    /// Sidecar text: a header line, then `name<TAB>offset<TAB>length` per segment.
    pub fn to_text(&self) -> String {
        let mut out = String::from("segment\toffset\tlength\n");
        for s in &self.segments {
            let _ = writeln!(out, "{}\t{}\t{}", s.kind.name(), s.offset, s.len);
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut segments = Vec::new();
        let mut expected_offset = 0;
        for (n, line) in text.lines().enumerate().skip(1) {
            if line.trim().is_empty() {
                continue;
            }
            let parts: Vec<&str> = line.split('\t').collect();
            let bad = || Error::Malformed(format!("layout line {}: {line:?}", n + 1));
            if parts.len() != 3 {
                return Err(bad());
            }
            let kind = parse_segment_name(parts[0]).ok_or_else(bad)?;
            let offset: usize = parts[1].parse().map_err(|_| bad())?;
            let len: usize = parts[2].parse().map_err(|_| bad())?;
            if offset != expected_offset {
                return Err(Error::Malformed(format!(
                    "layout segment {} starts at {offset}, expected {expected_offset}",
                    parts[0]
                )));
            }
            expected_offset += len;
            segments.push(Segment { kind, offset, len });
        }
        Ok(Layout { segments })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        crate::binio::write_atomic(path, self.to_text().as_bytes()).map_err(|e| e.at_path(path))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::from(e).at_path(path))?;
        Self::from_text(&text).map_err(|e| e.at_path(path))
    }
}

fn parse_segment_name(name: &str) -> Option<SegmentKind> {
    if name == "global" {
        return Some(SegmentKind::GLOBAL);
    }
    let (source, scale) = name.split_once("_scale")?;
    let source = match source {
        "structure" => SourceTag::Structure,
        "object" => SourceTag::Object,
        _ => return None,
    };
    Some(SegmentKind {
        source,
        scale_id: scale.parse().ok()?,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SceneRepresentation {
    pub values: Vec<f64>,
    pub layout: Layout,
}

impl SceneRepresentation {
    pub fn dim(&self) -> usize {
        self.values.len()
    }

    pub fn segment(&self, kind: SegmentKind) -> Option<&[f64]> {
        self.layout.find(kind).map(|s| &self.values[s.offset..s.offset + s.len])
    }

    /// Concatenation of the segments accepted by `keep`, L2-normalized.
    pub fn restricted(&self, keep: impl Fn(&SegmentKind) -> bool) -> Vec<f64> {
        let mut out: Vec<f64> = self
            .layout
            .segments
            .iter()
            .filter(|s| keep(&s.kind))
            .flat_map(|s| self.values[s.offset..s.offset + s.len].iter().copied())
            .collect();
        l2_normalize(&mut out);
        out
    }
}

/// Builds the scene representation from the whole-image descriptor and the
/// pooled local vectors.
///
/// Segments follow `layout`; each is L2-normalized on its own (zero vectors
/// stay zero), then the concatenation is normalized. Pooled vectors may be
/// given in any order but must cover exactly the local segments of the
/// layout.
pub fn assemble_with_layout(global: &[f64], pooled: &[PooledRepresentation], layout: &Layout) -> Result<SceneRepresentation> {
    let locals: Vec<&Segment> = layout.segments.iter().filter(|s| s.kind.is_local()).collect();
    if pooled.len() != locals.len() {
        return Err(Error::InvalidArgument(format!(
            "expected {} pooled vectors, got {}",
            locals.len(),
            pooled.len()
        )));
    }
    let mut values = vec![0.0; layout.total_len()];
    for seg in &layout.segments {
        let src: &[f64] = if seg.kind.is_local() {
            let p = pooled
                .iter()
                .find(|p| p.source == seg.kind.source && p.scale_id == seg.kind.scale_id)
                .ok_or_else(|| Error::InvalidArgument(format!("missing pooled segment {}", seg.kind.name())))?;
            &p.values
        } else {
            global
        };
        if src.len() != seg.len {
            return Err(Error::DimensionMismatch {
                context: "representation segment",
                expected: seg.len,
                found: src.len(),
            });
        }
        if src.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("segment {}", seg.kind.name())));
        }
        let dst = &mut values[seg.offset..seg.offset + seg.len];
        dst.copy_from_slice(src);
        l2_normalize(dst);
    }
    if l2_normalize(&mut values) == 0.0 {
        return Err(Error::InvalidArgument("all representation segments are zero".into()));
    }
    Ok(SceneRepresentation {
        values,
        layout: layout.clone(),
    })
}

/// Assembles the global descriptor with the four (structure, object) x
/// (scale 1, scale 2) pooled vectors.
pub fn assemble(global: &FeatureVector, pooled: &[PooledRepresentation; 4]) -> Result<SceneRepresentation> {
    let local_len = pooled[0].values.len();
    let layout = Layout::new(
        global.dim(),
        &[(SourceTag::Structure, local_len), (SourceTag::Object, local_len)],
        &[1, 2],
    );
    // The two sources may have different dictionary sizes.
    let mut layout = layout;
    let mut offset = global.dim();
    for seg in layout.segments.iter_mut().skip(1) {
        let p = pooled
            .iter()
            .find(|p| p.source == seg.kind.source && p.scale_id == seg.kind.scale_id)
            .ok_or_else(|| Error::InvalidArgument(format!("missing pooled segment {}", seg.kind.name())))?;
        seg.offset = offset;
        seg.len = p.values.len();
        offset += seg.len;
    }
    assemble_with_layout(&global.values, pooled, &layout)
}
