use super::Score;

/// Distinct score onsets and the notes starting at each.
#[derive(Clone, Debug, PartialEq)]
pub struct OnsetIndex {
    onsets: Vec<f64>,
    note_groups: Vec<Vec<String>>,
    members: Vec<Vec<usize>>,
    note_onset: Vec<usize>,
}

/// Groups the (canonically sorted) notes of `score` by onset.
pub fn build_onset_index(score: &Score) -> OnsetIndex {
    let mut onsets: Vec<f64> = Vec::new();
    let mut note_groups: Vec<Vec<String>> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    let mut note_onset = Vec::with_capacity(score.notes().len());
    for (i, n) in score.notes().iter().enumerate() {
        if onsets.last() != Some(&n.onset_beats) {
            onsets.push(n.onset_beats);
            note_groups.push(Vec::new());
            members.push(Vec::new());
        }
        note_groups.last_mut().unwrap().push(n.id.clone());
        members.last_mut().unwrap().push(i);
        note_onset.push(onsets.len() - 1);
    }
    OnsetIndex { onsets, note_groups, members, note_onset }
}

impl OnsetIndex {
    /// Number of distinct onsets `T`.
    pub fn len(&self) -> usize {
        self.onsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.onsets.is_empty()
    }

    /// Strictly increasing onset positions in beats.
    pub fn onsets(&self) -> &[f64] {
        &self.onsets
    }

    /// Note ids per onset.
    pub fn note_groups(&self) -> &[Vec<String>] {
        &self.note_groups
    }

    /// Note indices (into `Score::notes`) per onset.
    pub fn members(&self) -> &[Vec<usize>] {
        &self.members
    }

    /// Onset index of note `i`.
    pub fn onset_of(&self, note: usize) -> usize {
        self.note_onset[note]
    }

    pub fn note_onsets(&self) -> &[usize] {
        &self.note_onset
    }
}
