//! 8-connected component labeling (two-pass, union-find).

use super::{BBox, BinaryImage};

struct DisjointSet {
    parent: Vec<u32>,
}

impl DisjointSet {
    fn new() -> Self {
        // label 0 is background
        Self { parent: vec![0] }
    }

    fn make(&mut self) -> u32 {
        let id = self.parent.len() as u32;
        self.parent.push(id);
        id
    }

    fn find(&mut self, mut x: u32) -> u32 {
        while self.parent[x as usize] != x {
            let p = self.parent[x as usize];
            self.parent[x as usize] = self.parent[p as usize];
            x = p;
        }
        x
    }

    fn union(&mut self, a: u32, b: u32) {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra != rb {
            let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
            self.parent[hi as usize] = lo;
        }
    }
}

/// Labels foreground pixels with dense component ids `1..=count` in raster
/// order of first appearance; background is 0.
pub fn label_components(img: &BinaryImage) -> (Vec<u32>, usize) {
    let (w, h) = (img.width(), img.height());
    let mut labels = vec![0u32; w * h];
    let mut sets = DisjointSet::new();

    for y in 0..h {
        for x in 0..w {
            if !img.is_set(x, y) {
                continue;
            }
            // previously visited neighbours: W, NW, N, NE
            let mut current = 0u32;
            let visit = |nx: isize, ny: isize, current: &mut u32, sets: &mut DisjointSet| {
                if nx < 0 || ny < 0 || nx >= w as isize {
                    return;
                }
                let l = labels[ny as usize * w + nx as usize];
                if l != 0 {
                    if *current == 0 {
                        *current = l;
                    } else {
                        sets.union(*current, l);
                    }
                }
            };
            let (xi, yi) = (x as isize, y as isize);
            visit(xi - 1, yi, &mut current, &mut sets);
            visit(xi - 1, yi - 1, &mut current, &mut sets);
            visit(xi, yi - 1, &mut current, &mut sets);
            visit(xi + 1, yi - 1, &mut current, &mut sets);
            if current == 0 {
                current = sets.make();
            }
            labels[y * w + x] = current;
        }
    }

    let mut dense = vec![0u32; sets.parent.len()];
    let mut count = 0usize;
    for l in labels.iter_mut().filter(|l| **l != 0) {
        let root = sets.find(*l) as usize;
        if dense[root] == 0 {
            count += 1;
            dense[root] = count as u32;
        }
        *l = dense[root];
    }
    (labels, count)
}

/// Bounding boxes of 8-connected foreground components with at least
/// `min_area` pixels, largest first (ties by `y`, then `x`).
pub fn connected_components(img: &BinaryImage, min_area: usize) -> Vec<BBox> {
    let w = img.width();
    let (labels, count) = label_components(img);
    // (min_x, min_y, max_x, max_y, area)
    let mut acc = vec![(usize::MAX, usize::MAX, 0usize, 0usize, 0usize); count];
    for (i, &l) in labels.iter().enumerate() {
        if l == 0 {
            continue;
        }
        let (x, y) = (i % w, i / w);
        let a = &mut acc[l as usize - 1];
        a.0 = a.0.min(x);
        a.1 = a.1.min(y);
        a.2 = a.2.max(x);
        a.3 = a.3.max(y);
        a.4 += 1;
    }
    let mut boxes: Vec<BBox> = acc
        .into_iter()
        .filter(|a| a.4 >= min_area.max(1))
        .map(|(x0, y0, x1, y1, area)| BBox {
            x: x0,
            y: y0,
            w: x1 - x0 + 1,
            h: y1 - y0 + 1,
            area,
        })
        .collect();
    boxes.sort_by(|a, b| b.area.cmp(&a.area).then(a.y.cmp(&b.y)).then(a.x.cmp(&b.x)));
    boxes
}
