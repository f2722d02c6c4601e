use super::{MergedStream, SchemeTrack};
use crate::tensor::Tensor;

/// What a single merged-stream sample is annotated as.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum SampleClass {
    Unlabeled,
    Dropped,
    Label(usize),
}

/// Per-sample classes of a stream, with interval `[s, e)` covering samples
/// `[round((s − t0)·rate), round((e − t0)·rate))`.
pub fn sample_classes(stream: &MergedStream, track: &SchemeTrack) -> Vec<SampleClass> {
    let n = stream.len();
    let mut classes = vec![SampleClass::Unlabeled; n];
    let to_index = |t: f64| ((t - stream.start_time_s) * stream.rate_hz).round().clamp(0.0, n as f64) as usize;
    let spans = track
        .intervals
        .iter()
        .map(|&(s, e, l)| (s, e, SampleClass::Label(l)))
        .chain(track.dropped.iter().map(|&(s, e)| (s, e, SampleClass::Dropped)));
    for (s, e, class) in spans {
        classes[to_index(s)..to_index(e).max(to_index(s))].fill(class);
    }
    classes
}

/// Majority class of a span; ties go to the class that appears first.
pub fn majority(classes: &[SampleClass]) -> SampleClass {
    let mut tally: Vec<(SampleClass, usize)> = Vec::new();
    for &c in classes {
        match tally.iter_mut().find(|(k, _)| *k == c) {
            Some((_, n)) => *n += 1,
            None => tally.push((c, 1)),
        }
    }
    let mut best = tally[0];
    for &(c, n) in &tally[1..] {
        if n > best.1 {
            best = (c, n);
        }
    }
    best.0
}

#[derive(Clone, Debug, PartialEq)]
pub struct Window {
    /// `[W × C]`
    pub data: Tensor,
    pub label: usize,
    pub session_id: String,
    pub start_index: usize,
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct WindowDataset {
    pub windows: Vec<Window>,
    pub window_len: usize,
    pub step: usize,
    pub channel_layout: Vec<String>,
    pub labels: Vec<String>,
    pub warnings: Vec<String>,
}

impl WindowDataset {
    pub fn len(&self) -> usize {
        self.windows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.windows.is_empty()
    }

    pub fn num_channels(&self) -> usize {
        self.channel_layout.len()
    }

    pub fn targets(&self) -> Vec<usize> {
        self.windows.iter().map(|w| w.label).collect()
    }

    /// Concatenates datasets with identical window shape and label set.
    pub fn concat(parts: Vec<WindowDataset>) -> Option<WindowDataset> {
        let mut iter = parts.into_iter();
        let mut out = iter.next()?;
        for part in iter {
            if part.window_len != out.window_len || part.channel_layout != out.channel_layout || part.labels != out.labels {
                return None;
            }
            out.windows.extend(part.windows);
            out.warnings.extend(part.warnings);
        }
        Some(out)
    }

    /// Empty dataset with the same shape and label set.
    pub fn empty_like(&self) -> WindowDataset {
        WindowDataset {
            windows: Vec::new(),
            window_len: self.window_len,
            step: self.step,
            channel_layout: self.channel_layout.clone(),
            labels: self.labels.clone(),
            warnings: Vec::new(),
        }
    }

    /// Stacks the selected windows into `[B × W × C]`.
    pub fn batch(&self, indices: &[usize]) -> Tensor {
        let per = self.window_len * self.num_channels();
        let mut data = Vec::with_capacity(indices.len() * per);
        for &i in indices {
            data.extend_from_slice(self.windows[i].data.data());
        }
        Tensor::new(vec![indices.len(), self.window_len, self.num_channels()], data).expect("windows share a shape")
    }
}

/// Slides a `window_len` window with `step` over the stream. Windows whose
/// majority class is unlabeled time or a dropped activity are omitted.
pub fn segment_windows(stream: &MergedStream, track: &SchemeTrack, window_len: usize, step: usize) -> WindowDataset {
    assert!(window_len >= 1 && step >= 1, "window_len and step must be positive");
    let mut ds = WindowDataset {
        windows: Vec::new(),
        window_len,
        step,
        channel_layout: stream.channels.clone(),
        labels: track.labels.clone(),
        warnings: Vec::new(),
    };
    let t = stream.len();
    if window_len > t {
        let msg = format!("session {}: stream has {t} samples, shorter than window {window_len}", stream.session_id);
        log::warn!("{msg}");
        ds.warnings.push(msg);
        return ds;
    }
    let classes = sample_classes(stream, track);
    let c = stream.num_channels();
    for start in (0..=t - window_len).step_by(step) {
        if let SampleClass::Label(label) = majority(&classes[start..start + window_len]) {
            let data = stream.samples[start * c..(start + window_len) * c].to_vec();
            ds.windows.push(Window {
                data: Tensor::new(vec![window_len, c], data).expect("window slice"),
                label,
                session_id: stream.session_id.clone(),
                start_index: start,
            });
        }
    }
    ds
}

#[cfg(test)]
mod tests {
    use super::*;

    fn stream(t: usize) -> MergedStream {
        MergedStream {
            subject_id: "P".into(),
            session_id: "s1".into(),
            rate_hz: 25.0,
            start_time_s: 0.0,
            channels: vec!["a/x".into(), "a/cap".into()],
            samples: (0..t * 2).map(|v| v as f64).collect(),
        }
    }

    fn track(intervals: Vec<(f64, f64, usize)>, dropped: Vec<(f64, f64)>) -> SchemeTrack {
        SchemeTrack { labels: vec!["Walking".into(), "Null".into()], intervals, dropped }
    }

    #[test]
    fn window_counts() {
        let full = track(vec![(0.0, 4.0, 0)], vec![]);
        assert_eq!(segment_windows(&stream(100), &full, 25, 1).len(), 76);
        assert_eq!(segment_windows(&stream(100), &full, 100, 4).len(), 1);
        let short = segment_windows(&stream(20), &full, 25, 1);
        assert!(short.is_empty());
        assert_eq!(short.warnings.len(), 1);
    }

    #[test]
    fn thirteen_walking_beats_twelve_null() {
        // 13 Walking samples followed by 12 Null samples
        let tr = track(vec![(0.0, 0.52, 0), (0.52, 1.0, 1)], vec![]);
        let ds = segment_windows(&stream(25), &tr, 25, 1);
        assert_eq!(ds.windows[0].label, 0);
    }

    #[test]
    fn ties_go_to_earlier_class() {
        use SampleClass::*;
        assert_eq!(majority(&[Label(1), Label(1), Label(0), Label(0)]), Label(1));
        assert_eq!(majority(&[Unlabeled, Label(0), Unlabeled, Label(0)]), Unlabeled);
    }

    #[test]
    fn unlabeled_and_dropped_windows_are_omitted() {
        let tr = track(vec![(0.0, 1.0, 0)], vec![(1.0, 2.0)]);
        let ds = segment_windows(&stream(100), &tr, 25, 1);
        // starts 0..=12 have a Walking majority; the rest are dropped or unlabeled
        assert_eq!(ds.len(), 13);
        assert!(ds.windows.iter().all(|w| w.label == 0));
    }

    #[test]
    fn provenance_slices_match_stream() {
        let s = stream(60);
        let ds = segment_windows(&s, &track(vec![(0.0, 2.4, 1)], vec![]), 25, 3);
        for w in &ds.windows {
            assert_eq!(w.data.data(), &s.samples[w.start_index * 2..(w.start_index + 25) * 2]);
        }
        let b = ds.batch(&[0, 2]);
        assert_eq!(b.shape(), &[2, 25, 2]);
        assert_eq!(&b.data()[50..], ds.windows[2].data.data());
    }
}
