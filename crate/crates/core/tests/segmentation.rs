use proptest::prelude::*;

use capfusion::data::{segment_windows, MergedStream, SchemeTrack};

const RATE: f64 = 25.0;

fn stream(len: usize, start_time_s: f64) -> MergedStream {
    MergedStream {
        subject_id: "P1".into(),
        session_id: "S1".into(),
        rate_hz: RATE,
        start_time_s,
        channels: vec!["left/acc_x".into(), "left/cap".into()],
        samples: (0..len * 2).map(|v| v as f64 * 0.5).collect(),
    }
}

/// `None` unlabeled, `Some(None)` dropped, `Some(Some(l))` label `l`.
type Cell = Option<Option<usize>>;

/// Turns per-sample cells into a track of sample-aligned intervals.
fn track_from_cells(cells: &[Cell], t0: f64, labels: usize) -> SchemeTrack {
    let mut track = SchemeTrack { labels: (0..labels).map(|l| format!("L{l}")).collect(), intervals: vec![], dropped: vec![] };
    let mut i = 0;
    while i < cells.len() {
        let mut j = i;
        while j < cells.len() && cells[j] == cells[i] {
            j += 1;
        }
        let (s, e) = (t0 + i as f64 / RATE, t0 + j as f64 / RATE);
        match cells[i] {
            Some(Some(l)) => track.intervals.push((s, e, l)),
            Some(None) => track.dropped.push((s, e)),
            None => {}
        }
        i = j;
    }
    track
}

/// Majority by explicit counting; ties go to the class seen first in the window.
fn brute_majority(window: &[Cell]) -> Cell {
    let mut best = window[0];
    let mut best_count = 0;
    let mut seen: Vec<Cell> = Vec::new();
    for &c in window {
        if seen.contains(&c) {
            continue;
        }
        seen.push(c);
        let n = window.iter().filter(|&&x| x == c).count();
        if n > best_count {
            best = c;
            best_count = n;
        }
    }
    best
}

fn cell() -> impl Strategy<Value = Cell> {
    prop_oneof![
        1 => Just(None),
        1 => Just(Some(None)),
        4 => (0usize..3).prop_map(|l| Some(Some(l))),
    ]
}

/// Runs of equal cells, so windows see realistic boundaries rather than noise.
fn cells() -> impl Strategy<Value = Vec<Cell>> {
    prop::collection::vec((cell(), 1usize..40), 1..12)
        .prop_map(|runs| runs.into_iter().flat_map(|(c, n)| std::iter::repeat_n(c, n)).collect())
}

proptest! {
    #[test]
    fn window_count_law(len in 1usize..600, w in 1usize..120, step in 1usize..30, t0 in -5.0f64..5.0) {
        let s = stream(len, t0);
        let track = SchemeTrack { labels: vec!["A".into()], intervals: vec![(t0 - 1.0, t0 + len as f64 / RATE + 1.0, 0)], dropped: vec![] };
        let ds = segment_windows(&s, &track, w, step);
        let expected = if len >= w { (len - w) / step + 1 } else { 0 };
        prop_assert_eq!(ds.len(), expected);
        for (k, win) in ds.windows.iter().enumerate() {
            prop_assert_eq!(win.start_index, k * step);
            prop_assert_eq!(win.data.shape(), &[w, 2][..]);
            prop_assert_eq!(win.data.data()[0], s.row(k * step)[0]);
        }
    }

    #[test]
    fn labels_follow_sample_majority(cells in cells(), w in 1usize..50, step in 1usize..8, t0 in -3.0f64..3.0) {
        let s = stream(cells.len(), t0);
        let track = track_from_cells(&cells, t0, 3);
        let got: Vec<(usize, usize)> =
            segment_windows(&s, &track, w, step).windows.iter().map(|x| (x.start_index, x.label)).collect();
        let mut want = Vec::new();
        let mut start = 0;
        while start + w <= cells.len() {
            if let Some(Some(l)) = brute_majority(&cells[start..start + w]) {
                want.push((start, l));
            }
            start += step;
        }
        prop_assert_eq!(got, want);
    }
}

#[test]
fn windows_carry_session_and_layout() {
    let s = stream(60, 0.0);
    let track = SchemeTrack { labels: vec!["A".into(), "B".into()], intervals: vec![(0.0, 2.4, 1)], dropped: vec![] };
    let ds = segment_windows(&s, &track, 25, 5);
    assert_eq!(ds.channel_layout, s.channels);
    assert_eq!(ds.labels, track.labels);
    assert!(ds.windows.iter().all(|w| w.session_id == "S1" && w.label == 1));
    assert_eq!(ds.batch(&[0, 1]).shape(), &[2, 25, 2]);
}
