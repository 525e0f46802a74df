//! Electrode grid model: coordinates, stimulation pairs, pulse shapes, and the
//! generators for the three stimulus-pattern families (pointwise, oriented
//! bars, seven-segment digits).

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::Path;

use crate::error::{Error, Result};

/// Grid side length; the array is `GRID_SIDE x GRID_SIDE`.
pub const GRID_SIDE: usize = 64;
/// Total electrode count (4096).
pub const GRID_ELECTRODES: usize = GRID_SIDE * GRID_SIDE;
/// Recording/stimulation sample rate in Hz.
pub const SAMPLE_RATE_HZ: u32 = 20_000;

/// Position on the 64x64 electrode grid.
///
/// Fields are public so that raw (possibly invalid) coordinates can be
/// represented; [`ElectrodeCoord::new`] and [`validate_pattern`] enforce grid
/// bounds where they matter.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Debug)]
pub struct ElectrodeCoord {
    pub row: u8,
    pub col: u8,
}

impl ElectrodeCoord {
    pub fn new(row: usize, col: usize) -> Result<Self> {
        if row >= GRID_SIDE || col >= GRID_SIDE {
            return Err(Error::OutOfGrid {
                row: row as i64,
                col: col as i64,
            });
        }
        Ok(Self {
            row: row as u8,
            col: col as u8,
        })
    }

    pub fn in_grid(&self) -> bool {
        (self.row as usize) < GRID_SIDE && (self.col as usize) < GRID_SIDE
    }

    /// Row-major linear index.
    pub fn index(&self) -> usize {
        self.row as usize * GRID_SIDE + self.col as usize
    }

    pub fn from_index(index: usize) -> Result<Self> {
        if index >= GRID_ELECTRODES {
            return Err(Error::OutOfGrid {
                row: (index / GRID_SIDE) as i64,
                col: (index % GRID_SIDE) as i64,
            });
        }
        Ok(Self {
            row: (index / GRID_SIDE) as u8,
            col: (index % GRID_SIDE) as u8,
        })
    }

    /// Neighbor at the given offset, or an error when it leaves the grid.
    pub fn offset(&self, dr: i32, dc: i32) -> Result<Self> {
        let row = self.row as i64 + dr as i64;
        let col = self.col as i64 + dc as i64;
        if row < 0 || col < 0 || row as usize >= GRID_SIDE || col as usize >= GRID_SIDE {
            return Err(Error::OutOfGrid { row, col });
        }
        Ok(Self {
            row: row as u8,
            col: col as u8,
        })
    }

    pub fn manhattan(&self, other: &Self) -> u32 {
        self.row.abs_diff(other.row) as u32 + self.col.abs_diff(other.col) as u32
    }

    pub fn chebyshev(&self, other: &Self) -> u32 {
        (self.row.abs_diff(other.row)).max(self.col.abs_diff(other.col)) as u32
    }
}

impl fmt::Display for ElectrodeCoord {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({}, {})", self.row, self.col)
    }
}

/// 4-neighbor direction on the grid; north is toward row 0.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Direction {
    North,
    East,
    South,
    West,
}

impl Direction {
    pub fn delta(&self) -> (i32, i32) {
        match self {
            Direction::North => (-1, 0),
            Direction::East => (0, 1),
            Direction::South => (1, 0),
            Direction::West => (0, -1),
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "N" | "NORTH" => Ok(Direction::North),
            "E" | "EAST" => Ok(Direction::East),
            "S" | "SOUTH" => Ok(Direction::South),
            "W" | "WEST" => Ok(Direction::West),
            other => Err(Error::Parse {
                line: 0,
                msg: format!("unknown direction {other:?}"),
            }),
        }
    }
}

/// Bipolar stimulation pair. Current flows from `positive` to `negative`.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub struct ElectrodePair {
    pub positive: ElectrodeCoord,
    pub negative: ElectrodeCoord,
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum PulseShape {
    Monophasic,
    Biphasic,
}

impl fmt::Display for PulseShape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PulseShape::Monophasic => write!(f, "monophasic"),
            PulseShape::Biphasic => write!(f, "biphasic"),
        }
    }
}

/// Rectangular current pulse. Amplitude is interpreted per electrode pair.
#[derive(Clone, Copy, PartialEq, Debug)]
pub struct PulseSpec {
    pub shape: PulseShape,
    pub amplitude_ua: f64,
    pub width_pos_us: f64,
    pub width_neg_us: f64,
}

impl PulseSpec {
    pub fn monophasic(amplitude_ua: f64, width_us: f64) -> Self {
        Self {
            shape: PulseShape::Monophasic,
            amplitude_ua,
            width_pos_us: width_us,
            width_neg_us: 0.0,
        }
    }

    pub fn biphasic(amplitude_ua: f64, width_pos_us: f64, width_neg_us: f64) -> Self {
        Self {
            shape: PulseShape::Biphasic,
            amplitude_ua,
            width_pos_us,
            width_neg_us,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.amplitude_ua > 0.0) || !self.amplitude_ua.is_finite() {
            return Err(Error::InvalidPattern(format!(
                "pulse amplitude must be positive, got {}",
                self.amplitude_ua
            )));
        }
        if !(self.width_pos_us > 0.0) {
            return Err(Error::InvalidPattern(format!(
                "positive pulse width must be positive, got {}",
                self.width_pos_us
            )));
        }
        match self.shape {
            PulseShape::Monophasic if self.width_neg_us != 0.0 => Err(Error::InvalidPattern(
                "monophasic pulse must have zero negative width".into(),
            )),
            PulseShape::Biphasic if !(self.width_neg_us > 0.0) => Err(Error::InvalidPattern(
                "biphasic pulse must have positive negative width".into(),
            )),
            _ => Ok(()),
        }
    }
}

/// Pointwise/bar default stimulus: monophasic, 10 uA, 20 us.
pub const DEFAULT_MONOPHASIC: PulseSpec = PulseSpec {
    shape: PulseShape::Monophasic,
    amplitude_ua: 10.0,
    width_pos_us: 20.0,
    width_neg_us: 0.0,
};

/// Digit default stimulus: charge-balanced biphasic, 4 uA per pair, 100 us phases.
pub const DEFAULT_BIPHASIC: PulseSpec = PulseSpec {
    shape: PulseShape::Biphasic,
    amplitude_ua: 4.0,
    width_pos_us: 100.0,
    width_neg_us: 100.0,
};

/// Which pattern family an experiment (or a single pattern) belongs to.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Scenario {
    Pointwise,
    Bars,
    Digits,
}

impl Scenario {
    /// Token used in pattern files (singular form).
    pub fn pattern_token(&self) -> &'static str {
        match self {
            Scenario::Pointwise => "pointwise",
            Scenario::Bars => "bar",
            Scenario::Digits => "digit",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "pointwise" => Ok(Scenario::Pointwise),
            "bar" | "bars" => Ok(Scenario::Bars),
            "digit" | "digits" => Ok(Scenario::Digits),
            other => Err(Error::Parse {
                line: 0,
                msg: format!("unknown scenario {other:?}"),
            }),
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Scenario::Pointwise => write!(f, "pointwise"),
            Scenario::Bars => write!(f, "bars"),
            Scenario::Digits => write!(f, "digits"),
        }
    }
}

/// A labeled set of stimulation pairs plus the pulse they are driven with.
#[derive(Clone, PartialEq, Debug)]
pub struct StimulusPattern {
    pub class_label: u32,
    pub pairs: Vec<ElectrodePair>,
    pub pulse: PulseSpec,
    pub scenario: Scenario,
}

/// Bar orientation in degrees.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Orientation {
    Deg0,
    Deg45,
    Deg90,
    Deg135,
}

impl Orientation {
    pub fn degrees(&self) -> u32 {
        match self {
            Orientation::Deg0 => 0,
            Orientation::Deg45 => 45,
            Orientation::Deg90 => 90,
            Orientation::Deg135 => 135,
        }
    }

    pub fn from_degrees(deg: u32) -> Result<Self> {
        match deg {
            0 => Ok(Orientation::Deg0),
            45 => Ok(Orientation::Deg45),
            90 => Ok(Orientation::Deg90),
            135 => Ok(Orientation::Deg135),
            other => Err(Error::InvalidPattern(format!(
                "unsupported bar orientation {other} (use 0, 45, 90 or 135)"
            ))),
        }
    }

    /// Unit step along the bar axis, as a (row, col) delta. 0 degrees points
    /// east; angles increase counterclockwise (toward north).
    fn axis(&self) -> (i32, i32) {
        match self {
            Orientation::Deg0 => (0, 1),
            Orientation::Deg45 => (-1, 1),
            Orientation::Deg90 => (-1, 0),
            Orientation::Deg135 => (-1, -1),
        }
    }

    /// Offset from a positive pole to its negative pole: the 4-neighbor to the
    /// perpendicular-left of the axis direction. For diagonal axes the exact
    /// perpendicular is diagonal, so the horizontal component is used.
    fn negative_offset(&self) -> (i32, i32) {
        match self {
            Orientation::Deg0 => (-1, 0), // north
            Orientation::Deg45 => (0, -1),
            Orientation::Deg90 => (0, -1), // west
            Orientation::Deg135 => (0, -1),
        }
    }
}

/// One adjacent electrode pair stimulated with the family default pulse.
pub fn make_pointwise(
    center: ElectrodeCoord,
    neg_direction: Direction,
    label: u32,
) -> Result<StimulusPattern> {
    if !center.in_grid() {
        return Err(Error::OutOfGrid {
            row: center.row as i64,
            col: center.col as i64,
        });
    }
    let (dr, dc) = neg_direction.delta();
    let negative = center.offset(dr, dc)?;
    Ok(StimulusPattern {
        class_label: label,
        pairs: vec![ElectrodePair {
            positive: center,
            negative,
        }],
        pulse: DEFAULT_MONOPHASIC,
        scenario: Scenario::Pointwise,
    })
}

/// Bar of `n_pairs` pairs along `orientation`, positive poles spaced
/// `dilation + 1` electrode steps apart along the axis and centered on
/// `center` (for even pair counts the bar extends one extra step toward the
/// positive axis direction).
pub fn make_bar(
    center: ElectrodeCoord,
    orientation: Orientation,
    n_pairs: usize,
    dilation: u32,
    label: u32,
) -> Result<StimulusPattern> {
    if n_pairs == 0 {
        return Err(Error::InvalidPattern("bar needs at least one pair".into()));
    }
    let (ar, ac) = orientation.axis();
    let (nr, nc) = orientation.negative_offset();
    let step = dilation as i32 + 1;
    let back = ((n_pairs as i32 - 1) * step) / 2;
    let mut pairs = Vec::with_capacity(n_pairs);
    for i in 0..n_pairs as i32 {
        let along = i * step - back;
        let positive = center.offset(ar * along, ac * along)?;
        let negative = positive.offset(nr, nc)?;
        pairs.push(ElectrodePair { positive, negative });
    }
    Ok(StimulusPattern {
        class_label: label,
        pairs,
        pulse: DEFAULT_MONOPHASIC,
        scenario: Scenario::Bars,
    })
}

#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Digit {
    Zero,
    One,
    Eight,
}

impl Digit {
    pub fn value(&self) -> u32 {
        match self {
            Digit::Zero => 0,
            Digit::One => 1,
            Digit::Eight => 8,
        }
    }

    pub fn from_value(v: u32) -> Result<Self> {
        match v {
            0 => Ok(Digit::Zero),
            1 => Ok(Digit::One),
            8 => Ok(Digit::Eight),
            other => Err(Error::InvalidPattern(format!(
                "unsupported digit {other} (use 0, 1 or 8)"
            ))),
        }
    }
}

// Segment helpers for the digit layouts. Vertical segments carry their
// negative poles on the given horizontal side; horizontal segments on the
// given vertical side.
fn vertical_segment(
    top: ElectrodeCoord,
    len: usize,
    neg_dc: i32,
    pairs: &mut Vec<ElectrodePair>,
) -> Result<()> {
    for i in 0..len as i32 {
        let positive = top.offset(i, 0)?;
        let negative = positive.offset(0, neg_dc)?;
        pairs.push(ElectrodePair { positive, negative });
    }
    Ok(())
}

fn horizontal_segment(
    left: ElectrodeCoord,
    len: usize,
    neg_dr: i32,
    pairs: &mut Vec<ElectrodePair>,
) -> Result<()> {
    for i in 0..len as i32 {
        let positive = left.offset(0, i)?;
        let negative = positive.offset(neg_dr, 0)?;
        pairs.push(ElectrodePair { positive, negative });
    }
    Ok(())
}

/// Seven-segment style digit anchored at its top-left positive pole.
///
/// Digit 1 is a single vertical bar of seven pairs. Digit 0 is two vertical
/// bars of five pairs whose positive columns are four apart, closed by
/// three-pair horizontal bars at top and bottom. Digit 8 adds a center
/// horizontal bar. Negative poles face outward (and, for the center bar, the
/// row above) so no electrode serves as both polarities.
pub fn make_digit(digit: Digit, anchor: ElectrodeCoord, label: u32) -> Result<StimulusPattern> {
    let mut pairs = Vec::new();
    match digit {
        Digit::One => {
            vertical_segment(anchor, 7, -1, &mut pairs)?;
        }
        Digit::Zero | Digit::Eight => {
            // left and right verticals, negatives outward
            vertical_segment(anchor, 5, -1, &mut pairs)?;
            vertical_segment(anchor.offset(0, 4)?, 5, 1, &mut pairs)?;
            // top and bottom horizontals across the interior columns
            horizontal_segment(anchor.offset(0, 1)?, 3, -1, &mut pairs)?;
            horizontal_segment(anchor.offset(4, 1)?, 3, 1, &mut pairs)?;
            if digit == Digit::Eight {
                horizontal_segment(anchor.offset(2, 1)?, 3, -1, &mut pairs)?;
            }
        }
    }
    Ok(StimulusPattern {
        class_label: label,
        pairs,
        pulse: DEFAULT_BIPHASIC,
        scenario: Scenario::Digits,
    })
}

/// A single invariant violation found by [`validate_pattern`].
#[derive(Clone, PartialEq, Debug)]
pub enum Violation {
    Empty,
    OutOfGrid { pair_index: usize, coord: ElectrodeCoord },
    NotAdjacent { pair_index: usize },
    SamePole { pair_index: usize },
    PoleConflict { electrode: ElectrodeCoord },
    BadPulse(String),
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Empty => write!(f, "pattern has no pairs"),
            Violation::OutOfGrid { pair_index, coord } => {
                write!(f, "pair {pair_index}: coordinate {coord} is off-grid")
            }
            Violation::NotAdjacent { pair_index } => {
                write!(f, "pair {pair_index}: poles are not 4-neighbors")
            }
            Violation::SamePole { pair_index } => {
                write!(f, "pair {pair_index}: positive and negative poles coincide")
            }
            Violation::PoleConflict { electrode } => {
                write!(f, "electrode {electrode} is both a positive and a negative pole")
            }
            Violation::BadPulse(msg) => write!(f, "pulse: {msg}"),
        }
    }
}

/// Validation outcome; violations are data, not failures.
#[derive(Clone, PartialEq, Debug, Default)]
pub struct PatternReport {
    pub violations: Vec<Violation>,
}

impl PatternReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Checks every `StimulusPattern` invariant and reports all violations.
pub fn validate_pattern(pattern: &StimulusPattern) -> PatternReport {
    let mut report = PatternReport::default();
    if pattern.pairs.is_empty() {
        report.violations.push(Violation::Empty);
    }
    if let Err(e) = pattern.pulse.validate() {
        report.violations.push(Violation::BadPulse(e.to_string()));
    }
    let mut positives = Vec::new();
    let mut negatives = Vec::new();
    for (i, pair) in pattern.pairs.iter().enumerate() {
        for coord in [pair.positive, pair.negative] {
            if !coord.in_grid() {
                report
                    .violations
                    .push(Violation::OutOfGrid { pair_index: i, coord });
            }
        }
        if pair.positive == pair.negative {
            report.violations.push(Violation::SamePole { pair_index: i });
        } else if pair.positive.manhattan(&pair.negative) != 1 {
            report.violations.push(Violation::NotAdjacent { pair_index: i });
        }
        positives.push(pair.positive);
        negatives.push(pair.negative);
    }
    positives.sort_unstable();
    positives.dedup();
    for coord in positives {
        if negatives.contains(&coord) {
            report.violations.push(Violation::PoleConflict { electrode: coord });
        }
    }
    report
}

/// Validates a pattern, turning any violation into an error. Pipeline entry
/// points call this before trusting coordinates as array indices.
pub fn require_valid(pattern: &StimulusPattern) -> Result<()> {
    let report = validate_pattern(pattern);
    if report.is_ok() {
        Ok(())
    } else {
        let msgs: Vec<String> = report.violations.iter().map(|v| v.to_string()).collect();
        Err(Error::InvalidPattern(msgs.join("; ")))
    }
}

// ---------------------------------------------------------------------------
// Pattern file format: UTF-8 text, LF line endings. First line is the pulse
// header "pulse,<shape>,<amplitude_uA>,<width_pos_us>,<width_neg_us>", then
// one line per pair: "label,scenario,prow,pcol,nrow,ncol".
// ---------------------------------------------------------------------------

pub fn pattern_to_string(pattern: &StimulusPattern) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "pulse,{},{},{},{}\n",
        pattern.pulse.shape,
        pattern.pulse.amplitude_ua,
        pattern.pulse.width_pos_us,
        pattern.pulse.width_neg_us
    ));
    for pair in &pattern.pairs {
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            pattern.class_label,
            pattern.scenario.pattern_token(),
            pair.positive.row,
            pair.positive.col,
            pair.negative.row,
            pair.negative.col
        ));
    }
    out
}

pub fn pattern_from_str(text: &str) -> Result<StimulusPattern> {
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let (ln, header) = lines.next().ok_or(Error::Format("empty pattern file".into()))?;
    let fields: Vec<&str> = header.trim().split(',').collect();
    if fields.len() != 5 || fields[0] != "pulse" {
        return Err(Error::Parse {
            line: ln + 1,
            msg: "expected pulse header 'pulse,<shape>,<uA>,<us+>,<us->'".into(),
        });
    }
    let shape = match fields[1] {
        "monophasic" => PulseShape::Monophasic,
        "biphasic" => PulseShape::Biphasic,
        other => {
            return Err(Error::Parse {
                line: ln + 1,
                msg: format!("unknown pulse shape {other:?}"),
            })
        }
    };
    let num = |s: &str, line: usize| -> Result<f64> {
        s.trim().parse::<f64>().map_err(|e| Error::Parse {
            line,
            msg: format!("bad number {s:?}: {e}"),
        })
    };
    let pulse = PulseSpec {
        shape,
        amplitude_ua: num(fields[2], ln + 1)?,
        width_pos_us: num(fields[3], ln + 1)?,
        width_neg_us: num(fields[4], ln + 1)?,
    };

    let mut label: Option<u32> = None;
    let mut scenario: Option<Scenario> = None;
    let mut pairs = Vec::new();
    for (ln, line) in lines {
        let fields: Vec<&str> = line.trim().split(',').collect();
        if fields.len() != 6 {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "expected 'label,scenario,prow,pcol,nrow,ncol'".into(),
            });
        }
        let this_label: u32 = fields[0].trim().parse().map_err(|e| Error::Parse {
            line: ln + 1,
            msg: format!("bad label: {e}"),
        })?;
        let this_scenario = Scenario::parse(fields[1])?;
        if *label.get_or_insert(this_label) != this_label {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "pattern file mixes class labels".into(),
            });
        }
        if *scenario.get_or_insert(this_scenario) != this_scenario {
            return Err(Error::Parse {
                line: ln + 1,
                msg: "pattern file mixes scenarios".into(),
            });
        }
        let coord_field = |s: &str| -> Result<u8> {
            s.trim().parse::<u8>().map_err(|e| Error::Parse {
                line: ln + 1,
                msg: format!("bad coordinate {s:?}: {e}"),
            })
        };
        pairs.push(ElectrodePair {
            positive: ElectrodeCoord {
                row: coord_field(fields[2])?,
                col: coord_field(fields[3])?,
            },
            negative: ElectrodeCoord {
                row: coord_field(fields[4])?,
                col: coord_field(fields[5])?,
            },
        });
    }
    Ok(StimulusPattern {
        class_label: label.unwrap_or(0),
        pairs,
        pulse,
        scenario: scenario.unwrap_or(Scenario::Pointwise),
    })
}

pub fn write_pattern(pattern: &StimulusPattern, path: &Path) -> Result<()> {
    let mut file = fs::File::create(path)?;
    file.write_all(pattern_to_string(pattern).as_bytes())?;
    Ok(())
}

pub fn read_pattern(path: &Path) -> Result<StimulusPattern> {
    pattern_from_str(&fs::read_to_string(path)?)
}
