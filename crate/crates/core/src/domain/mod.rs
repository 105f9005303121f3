//! Shared domain vocabulary: identifiers, the three CVS criteria, case
//! provenance, assessments, and the two lifecycle state machines.
//!
//! Enum values serialize as uppercase strings; identifiers serialize as
//! bare strings.

mod annotator;
mod assessment;
mod video;

use std::fmt;
use std::ops::{Index, IndexMut};

use serde::{Deserialize, Serialize};

pub use annotator::{annotator_transition, Annotator, AnnotatorEvent, AnnotatorProfile, AnnotatorState, PASS_THRESHOLD};
pub use assessment::{Assessment, AssessmentError, FrameLabels, LabelTriple};
pub use video::{
    annotated_frame_indices, video_transition, Approach, CaseProvenance, ExclusionReason, Origin, PreAnnotation,
    PreAnnotationError, QualifiedClip, VideoCase, VideoEvent, VideoState, ANNOTATED_FRAMES,
    ANNOTATION_STRIDE, CLIP_DURATION_S, CLIP_FRAMES,
};

/// Wall-clock instant. Every module takes it as an argument; nothing reads
/// the system clock.
pub type Timestamp = chrono::DateTime<chrono::Utc>;

macro_rules! string_id {
    ($(#[$meta:meta])* $name:ident) => {
        $(#[$meta])*
        #[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
        #[serde(transparent)]
        pub struct $name(pub String);

        impl $name {
            pub fn new(id: impl Into<String>) -> Self {
                Self(id.into())
            }

            pub fn as_str(&self) -> &str {
                &self.0
            }
        }

        impl fmt::Display for $name {
            fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
                f.write_str(&self.0)
            }
        }

        impl From<&str> for $name {
            fn from(s: &str) -> Self {
                Self(s.to_owned())
            }
        }
    };
}

string_id!(
    /// Donated surgical case.
    CaseId
);
string_id!(
    /// 90-second qualified clip cut from a case.
    ClipId
);
string_id!(AnnotatorId);
string_id!(
    /// Organizer performing screening/preannotation (not a qualified annotator).
    RaterId
);
string_id!(TeamId);
string_id!(InstitutionId);

/// One of the three binary Critical View of Safety criteria.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum CvsCriterion {
    /// Two and only two tubular structures enter the gallbladder.
    C1,
    /// Hepatocystic triangle cleared of fat and fibrous tissue.
    C2,
    /// Lower third of the gallbladder detached from the liver bed.
    C3,
}

impl CvsCriterion {
    pub const ALL: [CvsCriterion; 3] = [CvsCriterion::C1, CvsCriterion::C2, CvsCriterion::C3];

    pub fn index(self) -> usize {
        match self {
            CvsCriterion::C1 => 0,
            CvsCriterion::C2 => 1,
            CvsCriterion::C3 => 2,
        }
    }
}

impl fmt::Display for CvsCriterion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            CvsCriterion::C1 => "C1",
            CvsCriterion::C2 => "C2",
            CvsCriterion::C3 => "C3",
        };
        f.write_str(s)
    }
}

/// A value for each of the three criteria. Serializes as `{c1, c2, c3}`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Default, Serialize, Deserialize)]
pub struct PerCriterion<T> {
    pub c1: T,
    pub c2: T,
    pub c3: T,
}

impl<T> PerCriterion<T> {
    pub fn new(c1: T, c2: T, c3: T) -> Self {
        Self { c1, c2, c3 }
    }

    pub fn from_fn(mut f: impl FnMut(CvsCriterion) -> T) -> Self {
        Self {
            c1: f(CvsCriterion::C1),
            c2: f(CvsCriterion::C2),
            c3: f(CvsCriterion::C3),
        }
    }

    pub fn map<U>(&self, mut f: impl FnMut(&T) -> U) -> PerCriterion<U> {
        PerCriterion {
            c1: f(&self.c1),
            c2: f(&self.c2),
            c3: f(&self.c3),
        }
    }

    pub fn iter(&self) -> impl Iterator<Item = (CvsCriterion, &T)> {
        CvsCriterion::ALL.into_iter().map(move |k| (k, &self[k]))
    }

    pub fn values(&self) -> [&T; 3] {
        [&self.c1, &self.c2, &self.c3]
    }
}

impl<T> Index<CvsCriterion> for PerCriterion<T> {
    type Output = T;

    fn index(&self, k: CvsCriterion) -> &T {
        match k {
            CvsCriterion::C1 => &self.c1,
            CvsCriterion::C2 => &self.c2,
            CvsCriterion::C3 => &self.c3,
        }
    }
}

impl<T> IndexMut<CvsCriterion> for PerCriterion<T> {
    fn index_mut(&mut self, k: CvsCriterion) -> &mut T {
        match k {
            CvsCriterion::C1 => &mut self.c1,
            CvsCriterion::C2 => &mut self.c2,
            CvsCriterion::C3 => &mut self.c3,
        }
    }
}

/// Dataset partition a clip belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Split {
    Train,
    Test,
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("illegal transition: event {event} from state {state}")]
pub struct IllegalTransition {
    pub state: String,
    pub event: String,
}
