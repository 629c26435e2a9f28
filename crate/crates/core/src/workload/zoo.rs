//! Reference workloads: ResNet-50 and Inception-v3 backbones with three
//! FLOP-equidistant intermediate exits, plus small synthetic models for
//! tests.
//!
//! Exit heads are not part of the layer tables; their cost is folded into
//! the layer they follow.

use std::collections::HashMap;

use super::{
    conv_net_to_gemm, place_exits_equidistant, ConvNetDescriptor, ExitProfile, LayerSpec,
    ModelSpec, NetLayer, NetOp, TensorShape,
};

/// Exit rates of the 4-exit ResNet-50 at a 0.8 confidence threshold.
pub const RESNET50_EXIT_RATES: [f64; 4] = [0.051, 0.169, 0.090, 0.690];
/// Exit rates of the 4-exit Inception-v3 at a 0.8 confidence threshold.
pub const INCEPTION_V3_EXIT_RATES: [f64; 4] = [0.145, 0.186, 0.222, 0.447];

pub const RESNET50_JSON: &str = include_str!("../../models/resnet50.json");
pub const INCEPTION_V3_JSON: &str = include_str!("../../models/inception_v3.json");
pub const SYNTHETIC10_JSON: &str = include_str!("../../models/synthetic10.json");

struct NetBuilder {
    name: String,
    input: TensorShape,
    layers: Vec<NetLayer>,
    shapes: HashMap<String, TensorShape>,
    last: String,
}

impl NetBuilder {
    fn new(name: &str, input: TensorShape) -> Self {
        let mut shapes = HashMap::new();
        shapes.insert("input".to_string(), input);
        Self {
            name: name.into(),
            input,
            layers: Vec::new(),
            shapes,
            last: "input".into(),
        }
    }

    fn push(&mut self, name: String, from: &[&str], op: NetOp, out: TensorShape) -> String {
        let from = if from.len() == 1 && from[0] == self.last {
            Vec::new()
        } else {
            from.iter().map(|s| s.to_string()).collect()
        };
        self.layers.push(NetLayer {
            name: name.clone(),
            from,
            op,
        });
        self.shapes.insert(name.clone(), out);
        self.last = name.clone();
        name
    }

    fn conv(
        &mut self,
        name: &str,
        from: &str,
        c_out: u64,
        kernel: [u64; 2],
        stride: u64,
        padding: [u64; 2],
    ) -> String {
        let src = self.shapes[from];
        let h = (src.height + 2 * padding[0] - kernel[0]) / stride + 1;
        let w = (src.width + 2 * padding[1] - kernel[1]) / stride + 1;
        let op = NetOp::Conv {
            c_in: src.channels,
            c_out,
            kernel,
            stride: [stride, stride],
            padding,
            in_h: src.height,
            in_w: src.width,
        };
        self.push(name.into(), &[from], op, TensorShape::new(c_out, h, w))
    }

    fn sq(&mut self, name: &str, from: &str, c_out: u64, k: u64, stride: u64, pad: u64) -> String {
        self.conv(name, from, c_out, [k, k], stride, [pad, pad])
    }

    fn pool(&mut self, name: &str, from: &str, k: u64, stride: u64, pad: u64) -> String {
        let src = self.shapes[from];
        let out = TensorShape::new(
            src.channels,
            (src.height + 2 * pad - k) / stride + 1,
            (src.width + 2 * pad - k) / stride + 1,
        );
        let op = NetOp::Pool {
            kernel: [k, k],
            stride: [stride, stride],
            padding: [pad, pad],
        };
        self.push(name.into(), &[from], op, out)
    }

    fn concat(&mut self, name: &str, from: &[String]) -> String {
        let first = self.shapes[&from[0]];
        let channels = from.iter().map(|f| self.shapes[f].channels).sum();
        let refs: Vec<&str> = from.iter().map(String::as_str).collect();
        self.push(
            name.into(),
            &refs,
            NetOp::Concat,
            TensorShape::new(channels, first.height, first.width),
        )
    }

    fn add(&mut self, name: &str, a: &str, b: &str) -> String {
        let out = self.shapes[a];
        self.push(name.into(), &[a, b], NetOp::Add, out)
    }

    fn head(&mut self, classes: u64) {
        let last = self.last.clone();
        let channels = self.shapes[&last].channels;
        self.push(
            "avgpool".into(),
            &[&last],
            NetOp::GlobalPool,
            TensorShape::new(channels, 1, 1),
        );
        self.push(
            "fc".into(),
            &["avgpool"],
            NetOp::Fc {
                inputs: channels,
                outputs: classes,
            },
            TensorShape::new(classes, 1, 1),
        );
    }

    fn build(self) -> ConvNetDescriptor {
        ConvNetDescriptor {
            name: self.name,
            input: self.input,
            layers: self.layers,
        }
    }
}

/// ResNet-50 (bottleneck v1.5, stride on the 3×3 conv) at 224×224.
///
/// 54 GEMM layers: the stem, 48 bottleneck convolutions, 4 projection
/// shortcuts and the classifier.
pub fn resnet50_descriptor() -> ConvNetDescriptor {
    let mut b = NetBuilder::new("resnet50", TensorShape::new(3, 224, 224));
    b.sq("conv1", "input", 64, 7, 2, 3);
    let mut x = b.pool("maxpool", "conv1", 3, 2, 1);
    let stages = [(3, 64, 1), (4, 128, 2), (6, 256, 2), (3, 512, 2)];
    for (si, &(blocks, width, stride)) in stages.iter().enumerate() {
        for blk in 0..blocks {
            let s = if blk == 0 { stride } else { 1 };
            let p = format!("layer{}.{}", si + 1, blk);
            let c1 = b.sq(&format!("{p}.conv1"), &x, width, 1, 1, 0);
            let c2 = b.sq(&format!("{p}.conv2"), &c1, width, 3, s, 1);
            let c3 = b.sq(&format!("{p}.conv3"), &c2, width * 4, 1, 1, 0);
            let shortcut = if blk == 0 {
                b.sq(&format!("{p}.downsample"), &x, width * 4, 1, s, 0)
            } else {
                x.clone()
            };
            x = b.add(&format!("{p}.add"), &c3, &shortcut);
        }
    }
    b.head(1000);
    b.build()
}

fn inception_a(b: &mut NetBuilder, p: &str, x: &str, pool_features: u64) -> String {
    let b1 = b.sq(&format!("{p}.branch1x1"), x, 64, 1, 1, 0);
    let t = b.sq(&format!("{p}.branch5x5_1"), x, 48, 1, 1, 0);
    let b5 = b.sq(&format!("{p}.branch5x5_2"), &t, 64, 5, 1, 2);
    let t = b.sq(&format!("{p}.branch3x3dbl_1"), x, 64, 1, 1, 0);
    let t = b.sq(&format!("{p}.branch3x3dbl_2"), &t, 96, 3, 1, 1);
    let b3 = b.sq(&format!("{p}.branch3x3dbl_3"), &t, 96, 3, 1, 1);
    let t = b.pool(&format!("{p}.avgpool"), x, 3, 1, 1);
    let bp = b.sq(&format!("{p}.branch_pool"), &t, pool_features, 1, 1, 0);
    b.concat(&format!("{p}.concat"), &[b1, b5, b3, bp])
}

fn inception_b(b: &mut NetBuilder, p: &str, x: &str) -> String {
    let b3 = b.sq(&format!("{p}.branch3x3"), x, 384, 3, 2, 0);
    let t = b.sq(&format!("{p}.branch3x3dbl_1"), x, 64, 1, 1, 0);
    let t = b.sq(&format!("{p}.branch3x3dbl_2"), &t, 96, 3, 1, 1);
    let bd = b.sq(&format!("{p}.branch3x3dbl_3"), &t, 96, 3, 2, 0);
    let bp = b.pool(&format!("{p}.maxpool"), x, 3, 2, 0);
    b.concat(&format!("{p}.concat"), &[b3, bd, bp])
}

fn inception_c(b: &mut NetBuilder, p: &str, x: &str, c7: u64) -> String {
    let row = |k| [1, k];
    let col = |k| [k, 1];
    let b1 = b.sq(&format!("{p}.branch1x1"), x, 192, 1, 1, 0);
    let t = b.sq(&format!("{p}.branch7x7_1"), x, c7, 1, 1, 0);
    let t = b.conv(&format!("{p}.branch7x7_2"), &t, c7, row(7), 1, [0, 3]);
    let b7 = b.conv(&format!("{p}.branch7x7_3"), &t, 192, col(7), 1, [3, 0]);
    let t = b.sq(&format!("{p}.branch7x7dbl_1"), x, c7, 1, 1, 0);
    let t = b.conv(&format!("{p}.branch7x7dbl_2"), &t, c7, col(7), 1, [3, 0]);
    let t = b.conv(&format!("{p}.branch7x7dbl_3"), &t, c7, row(7), 1, [0, 3]);
    let t = b.conv(&format!("{p}.branch7x7dbl_4"), &t, c7, col(7), 1, [3, 0]);
    let bd = b.conv(&format!("{p}.branch7x7dbl_5"), &t, 192, row(7), 1, [0, 3]);
    let t = b.pool(&format!("{p}.avgpool"), x, 3, 1, 1);
    let bp = b.sq(&format!("{p}.branch_pool"), &t, 192, 1, 1, 0);
    b.concat(&format!("{p}.concat"), &[b1, b7, bd, bp])
}

fn inception_d(b: &mut NetBuilder, p: &str, x: &str) -> String {
    let t = b.sq(&format!("{p}.branch3x3_1"), x, 192, 1, 1, 0);
    let b3 = b.sq(&format!("{p}.branch3x3_2"), &t, 320, 3, 2, 0);
    let t = b.sq(&format!("{p}.branch7x7x3_1"), x, 192, 1, 1, 0);
    let t = b.conv(&format!("{p}.branch7x7x3_2"), &t, 192, [1, 7], 1, [0, 3]);
    let t = b.conv(&format!("{p}.branch7x7x3_3"), &t, 192, [7, 1], 1, [3, 0]);
    let b7 = b.sq(&format!("{p}.branch7x7x3_4"), &t, 192, 3, 2, 0);
    let bp = b.pool(&format!("{p}.maxpool"), x, 3, 2, 0);
    b.concat(&format!("{p}.concat"), &[b3, b7, bp])
}

fn inception_e(b: &mut NetBuilder, p: &str, x: &str) -> String {
    let b1 = b.sq(&format!("{p}.branch1x1"), x, 320, 1, 1, 0);
    let t = b.sq(&format!("{p}.branch3x3_1"), x, 384, 1, 1, 0);
    let b3a = b.conv(&format!("{p}.branch3x3_2a"), &t, 384, [1, 3], 1, [0, 1]);
    let b3b = b.conv(&format!("{p}.branch3x3_2b"), &t, 384, [3, 1], 1, [1, 0]);
    let t = b.sq(&format!("{p}.branch3x3dbl_1"), x, 448, 1, 1, 0);
    let t = b.sq(&format!("{p}.branch3x3dbl_2"), &t, 384, 3, 1, 1);
    let bda = b.conv(&format!("{p}.branch3x3dbl_3a"), &t, 384, [1, 3], 1, [0, 1]);
    let bdb = b.conv(&format!("{p}.branch3x3dbl_3b"), &t, 384, [3, 1], 1, [1, 0]);
    let t = b.pool(&format!("{p}.avgpool"), x, 3, 1, 1);
    let bp = b.sq(&format!("{p}.branch_pool"), &t, 192, 1, 1, 0);
    b.concat(&format!("{p}.concat"), &[b1, b3a, b3b, bda, bdb, bp])
}

/// Inception-v3 at 299×299 without the auxiliary classifier: 94
/// convolutions and the classifier.
pub fn inception_v3_descriptor() -> ConvNetDescriptor {
    let mut b = NetBuilder::new("inception_v3", TensorShape::new(3, 299, 299));
    b.sq("Conv2d_1a_3x3", "input", 32, 3, 2, 0);
    b.sq("Conv2d_2a_3x3", "Conv2d_1a_3x3", 32, 3, 1, 0);
    b.sq("Conv2d_2b_3x3", "Conv2d_2a_3x3", 64, 3, 1, 1);
    b.pool("maxpool1", "Conv2d_2b_3x3", 3, 2, 0);
    b.sq("Conv2d_3b_1x1", "maxpool1", 80, 1, 1, 0);
    b.sq("Conv2d_4a_3x3", "Conv2d_3b_1x1", 192, 3, 1, 0);
    let x = b.pool("maxpool2", "Conv2d_4a_3x3", 3, 2, 0);
    let x = inception_a(&mut b, "Mixed_5b", &x, 32);
    let x = inception_a(&mut b, "Mixed_5c", &x, 64);
    let x = inception_a(&mut b, "Mixed_5d", &x, 64);
    let x = inception_b(&mut b, "Mixed_6a", &x);
    let x = inception_c(&mut b, "Mixed_6b", &x, 128);
    let x = inception_c(&mut b, "Mixed_6c", &x, 160);
    let x = inception_c(&mut b, "Mixed_6d", &x, 160);
    let x = inception_c(&mut b, "Mixed_6e", &x, 192);
    let x = inception_d(&mut b, "Mixed_7a", &x);
    let x = inception_e(&mut b, "Mixed_7b", &x);
    inception_e(&mut b, "Mixed_7c", &x);
    b.head(1000);
    b.build()
}

fn with_equidistant_exits(name: &str, layers: Vec<LayerSpec>, rates: &[f64]) -> ModelSpec {
    let placement =
        place_exits_equidistant(&layers, rates.len() - 1).expect("backbone deep enough for exits");
    assert!(placement.warnings.is_empty(), "{:?}", placement.warnings);
    let exits = ExitProfile::new(placement.indices, rates.to_vec()).expect("valid exit rates");
    ModelSpec::new(name, layers, exits).expect("valid model")
}

/// 4-exit ResNet-50 derived from [`resnet50_descriptor`].
pub fn resnet50() -> ModelSpec {
    let layers = conv_net_to_gemm(&resnet50_descriptor()).expect("valid descriptor");
    with_equidistant_exits("resnet50", layers, &RESNET50_EXIT_RATES)
}

/// 4-exit Inception-v3 derived from [`inception_v3_descriptor`].
pub fn inception_v3() -> ModelSpec {
    let layers = conv_net_to_gemm(&inception_v3_descriptor()).expect("valid descriptor");
    with_equidistant_exits("inception_v3", layers, &INCEPTION_V3_EXIT_RATES)
}

/// Ten-layer model with a spread of shapes (wide-shallow to narrow-deep and
/// a classifier), for fast tests.
pub fn synthetic10() -> ModelSpec {
    let dims: [(u64, u64, u64); 9] = [
        (1024, 27, 16),
        (1024, 144, 32),
        (256, 288, 32),
        (256, 288, 64),
        (64, 576, 64),
        (64, 576, 128),
        (16, 1152, 128),
        (16, 1152, 256),
        (4, 2304, 256),
    ];
    let mut layers: Vec<LayerSpec> = dims
        .iter()
        .enumerate()
        .map(|(i, &(r, p, c))| LayerSpec::conv(i, r, p, c))
        .collect();
    layers.push(LayerSpec::fc(9, 1024, 10));
    with_equidistant_exits("synthetic10", layers, &[0.2, 0.2, 0.2, 0.4])
}

/// Fifty identical layers with exits after layers 12, 25, 37 and 49.
pub fn synthetic50() -> ModelSpec {
    let layers = (0..50).map(|i| LayerSpec::conv(i, 64, 64, 64)).collect();
    let exits = ExitProfile::new(vec![12, 25, 37, 49], vec![0.25; 4]).expect("valid profile");
    ModelSpec::new("synthetic50", layers, exits).expect("valid model")
}

/// Looks a shipped model up by name.
pub fn by_name(name: &str) -> Option<ModelSpec> {
    match name {
        "resnet50" => Some(resnet50()),
        "inception_v3" => Some(inception_v3()),
        "synthetic10" => Some(synthetic10()),
        "synthetic50" => Some(synthetic50()),
        _ => None,
    }
}
