//! Connected-component labelling on boolean grids.

use std::collections::VecDeque;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Four,
    Eight,
}

impl Connectivity {
    fn offsets(self) -> &'static [(isize, isize)] {
        match self {
            Connectivity::Four => &[(1, 0), (-1, 0), (0, 1), (0, -1)],
            Connectivity::Eight => &[(1, 0), (-1, 0), (0, 1), (0, -1), (1, 1), (1, -1), (-1, 1), (-1, -1)],
        }
    }
}

/// Component labels (0 = not foreground, 1.. = component id in raster order of
/// first pixel) and the size of each component (`sizes[k - 1]` for label k).
#[derive(Debug, Clone)]
pub struct Components {
    pub labels: Vec<u32>,
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }

    /// Components with at least `min_size` pixels.
    pub fn count_at_least(&self, min_size: usize) -> usize {
        self.sizes.iter().filter(|&&s| s >= min_size).count()
    }

    /// Label of the largest component (lowest label on ties).
    pub fn largest(&self) -> Option<u32> {
        let mut best: Option<(usize, u32)> = None;
        for (i, &s) in self.sizes.iter().enumerate() {
            if best.is_none_or(|(bs, _)| s > bs) {
                best = Some((s, i as u32 + 1));
            }
        }
        best.map(|(_, l)| l)
    }
}

pub fn label(fg: &[bool], width: usize, height: usize, conn: Connectivity) -> Components {
    assert_eq!(fg.len(), width * height);
    let mut labels = vec![0u32; fg.len()];
    let mut sizes = Vec::new();
    let mut queue = VecDeque::new();
    for start in 0..fg.len() {
        if !fg[start] || labels[start] != 0 {
            continue;
        }
        let id = sizes.len() as u32 + 1;
        labels[start] = id;
        queue.push_back(start);
        let mut size = 0;
        while let Some(i) = queue.pop_front() {
            size += 1;
            let (x, y) = ((i % width) as isize, (i / width) as isize);
            for &(ox, oy) in conn.offsets() {
                let (nx, ny) = (x + ox, y + oy);
                if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                    continue;
                }
                let j = ny as usize * width + nx as usize;
                if fg[j] && labels[j] == 0 {
                    labels[j] = id;
                    queue.push_back(j);
                }
            }
        }
        sizes.push(size);
    }
    Components { labels, sizes }
}

/// Pixels of `open` reachable from the image border through `open` pixels.
pub fn reachable_from_border(open: &[bool], width: usize, height: usize, conn: Connectivity) -> Vec<bool> {
    let mut seen = vec![false; open.len()];
    let mut queue = VecDeque::new();
    for y in 0..height {
        for x in 0..width {
            if (x == 0 || y == 0 || x + 1 == width || y + 1 == height) && open[y * width + x] {
                let i = y * width + x;
                if !seen[i] {
                    seen[i] = true;
                    queue.push_back(i);
                }
            }
        }
    }
    while let Some(i) = queue.pop_front() {
        let (x, y) = ((i % width) as isize, (i / width) as isize);
        for &(ox, oy) in conn.offsets() {
            let (nx, ny) = (x + ox, y + oy);
            if nx < 0 || ny < 0 || nx >= width as isize || ny >= height as isize {
                continue;
            }
            let j = ny as usize * width + nx as usize;
            if open[j] && !seen[j] {
                seen[j] = true;
                queue.push_back(j);
            }
        }
    }
    seen
}
