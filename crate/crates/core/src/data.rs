//! Observed event sequences.

use crate::error::{Error, Result};

/// A single occurrence. `kind` is the zero-based event type.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Event {
    pub time: f64,
    pub kind: usize,
}

impl Event {
    pub fn new(time: f64, kind: usize) -> Self {
        Self { time, kind }
    }
}

/// One observed sequence of events on the window `[t_minus, t_plus]`.
///
/// Events are sorted by time. Ties are allowed and keep their input order;
/// an event never influences events that share its timestamp.
#[derive(Debug, Clone, PartialEq)]
pub struct Realization {
    pub id: String,
    pub t_minus: f64,
    pub t_plus: f64,
    pub events: Vec<Event>,
}

impl Realization {
    pub fn new(id: impl Into<String>, t_minus: f64, t_plus: f64, events: Vec<Event>) -> Result<Self> {
        let r = Self {
            id: id.into(),
            t_minus,
            t_plus,
            events,
        };
        r.validate()?;
        Ok(r)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.t_minus.is_finite() && self.t_plus.is_finite()) || self.t_minus >= self.t_plus {
            return Err(Error::InvalidData(format!(
                "realization `{}`: window [{}, {}] is empty or not finite",
                self.id, self.t_minus, self.t_plus
            )));
        }
        let mut prev = self.t_minus;
        for (i, e) in self.events.iter().enumerate() {
            if !e.time.is_finite() || e.time < self.t_minus || e.time > self.t_plus {
                return Err(Error::InvalidData(format!(
                    "realization `{}`: event {} at {} lies outside [{}, {}]",
                    self.id, i, e.time, self.t_minus, self.t_plus
                )));
            }
            if e.time < prev {
                return Err(Error::InvalidData(format!(
                    "realization `{}`: events not sorted at index {} ({} < {})",
                    self.id, i, e.time, prev
                )));
            }
            prev = e.time;
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.events.len()
    }

    pub fn is_empty(&self) -> bool {
        self.events.is_empty()
    }

    pub fn duration(&self) -> f64 {
        self.t_plus - self.t_minus
    }

    /// Copy of this realization with every time shifted by `delta`.
    pub fn shifted(&self, delta: f64) -> Self {
        Self {
            id: self.id.clone(),
            t_minus: self.t_minus + delta,
            t_plus: self.t_plus + delta,
            events: self
                .events
                .iter()
                .map(|e| Event::new(e.time + delta, e.kind))
                .collect(),
        }
    }
}

/// A collection of i.i.d. realizations over `d` event types.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    d: usize,
    realizations: Vec<Realization>,
}

impl Dataset {
    pub fn new(d: usize, realizations: Vec<Realization>) -> Result<Self> {
        if d == 0 {
            return Err(Error::InvalidData("number of event types must be at least 1".into()));
        }
        for r in &realizations {
            r.validate()?;
            if let Some((i, e)) = r.events.iter().enumerate().find(|(_, e)| e.kind >= d) {
                return Err(Error::InvalidData(format!(
                    "realization `{}`: event {} has type {} but d = {}",
                    r.id,
                    i,
                    e.kind + 1,
                    d
                )));
            }
        }
        Ok(Self { d, realizations })
    }

    pub fn d(&self) -> usize {
        self.d
    }

    pub fn realizations(&self) -> &[Realization] {
        &self.realizations
    }

    pub fn into_realizations(self) -> Vec<Realization> {
        self.realizations
    }

    /// Total number of events `N`.
    pub fn total_events(&self) -> usize {
        self.realizations.iter().map(Realization::len).sum()
    }

    /// Latest end of observation `T`.
    pub fn horizon(&self) -> f64 {
        self.realizations
            .iter()
            .map(|r| r.t_plus)
            .fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn origin(&self) -> f64 {
        self.realizations
            .iter()
            .map(|r| r.t_minus)
            .fold(f64::INFINITY, f64::min)
    }

    /// Sum of window lengths over realizations.
    pub fn total_duration(&self) -> f64 {
        self.realizations.iter().map(Realization::duration).sum()
    }

    pub fn counts_by_type(&self) -> Vec<usize> {
        let mut counts = vec![0; self.d];
        for e in self.realizations.iter().flat_map(|r| &r.events) {
            counts[e.kind] += 1;
        }
        counts
    }

    /// Shift all times so that the earliest window starts at 0.
    pub fn normalized(self) -> Self {
        let origin = self.origin();
        if self.realizations.is_empty() || origin == 0.0 {
            return self;
        }
        let realizations = self.realizations.iter().map(|r| r.shifted(-origin)).collect();
        Self {
            d: self.d,
            realizations,
        }
    }

    /// Split off the trailing `fraction` of realizations as a holdout set.
    pub fn split_holdout(&self, fraction: f64) -> Result<(Dataset, Dataset)> {
        if !(0.0..1.0).contains(&fraction) {
            return Err(Error::InvalidConfig(format!(
                "holdout fraction {fraction} must lie in [0, 1)"
            )));
        }
        let n = self.realizations.len();
        let n_holdout = ((n as f64) * fraction).round() as usize;
        let cut = n - n_holdout.min(n);
        Ok((
            Dataset {
                d: self.d,
                realizations: self.realizations[..cut].to_vec(),
            },
            Dataset {
                d: self.d,
                realizations: self.realizations[cut..].to_vec(),
            },
        ))
    }
}
