/// Result of 8-connected labeling; labels follow first raster occurrence.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Components {
    pub labels: Vec<Option<usize>>,
    pub sizes: Vec<usize>,
}

impl Components {
    pub fn count(&self) -> usize {
        self.sizes.len()
    }
}

fn find(parent: &mut [usize], mut x: usize) -> usize {
    while parent[x] != x {
        parent[x] = parent[parent[x]];
        x = parent[x];
    }
    x
}

/// Two-pass union-find labeling of `true` pixels with 8-connectivity.
pub fn connected_components(mask: &[bool], height: usize, width: usize) -> Components {
    assert_eq!(
        mask.len(),
        height * width,
        "mask does not match {height}x{width}"
    );
    let mut parent: Vec<usize> = (0..mask.len()).collect();
    for y in 0..height {
        for x in 0..width {
            let i = y * width + x;
            if !mask[i] {
                continue;
            }
            let mut neighbours = [None; 4];
            if x > 0 {
                neighbours[0] = Some(i - 1);
            }
            if y > 0 {
                let up = i - width;
                neighbours[1] = Some(up);
                if x > 0 {
                    neighbours[2] = Some(up - 1);
                }
                if x + 1 < width {
                    neighbours[3] = Some(up + 1);
                }
            }
            for n in neighbours.into_iter().flatten() {
                if mask[n] {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, n));
                    if a != b {
                        let (lo, hi) = (a.min(b), a.max(b));
                        parent[hi] = lo;
                    }
                }
            }
        }
    }
    let mut root_label = vec![usize::MAX; mask.len()];
    let mut labels = vec![None; mask.len()];
    let mut sizes = Vec::new();
    for i in 0..mask.len() {
        if !mask[i] {
            continue;
        }
        let r = find(&mut parent, i);
        if root_label[r] == usize::MAX {
            root_label[r] = sizes.len();
            sizes.push(0);
        }
        labels[i] = Some(root_label[r]);
        sizes[root_label[r]] += 1;
    }
    Components { labels, sizes }
}
