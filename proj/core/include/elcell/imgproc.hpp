#pragma once

#include <utility>

#include "elcell/image.hpp"

namespace elcell::imgproc {

/// Affine-maps intensities so min -> 0 and max -> 1. A constant image maps to
/// all zeros.
GrayImage stretch_contrast(const GrayImage& img);

/// Divides the image by a background estimate (Gaussian blur followed by a
/// grayscale closing with a disk element) and histogram-equalizes the ratio.
/// Background pixels below 1e-6 are treated as 1 before the division.
GrayImage equalize_background(const GrayImage& img, double blur_sigma, int disk_radius);

/// Global Otsu threshold over a 256-bin histogram. Returns the threshold
/// intensity and the mask of pixels above it. A constant image yields an
/// empty mask.
std::pair<float, BinaryMask> otsu_threshold(const GrayImage& img);

/// Pixel is true iff its intensity exceeds the mean of the (clipped) window
/// centered on it. window must be odd and >= 3.
BinaryMask adaptive_threshold_mean(const GrayImage& img, int window);

/// Morphological opening with a disk element followed by filling interior
/// holes (false regions not reachable from the border).
BinaryMask binary_cleanup(const BinaryMask& mask, int open_radius);

/// Filled convex hull of all true pixels. Throws on an empty mask.
BinaryMask convex_hull_mask(const BinaryMask& mask);

// Shared primitives used across the pipeline.

/// Separable Gaussian blur; kernel truncated at 3 sigma and renormalized at
/// the borders (clipped window, no padding values).
GrayImage gaussian_blur(const GrayImage& img, double sigma);

/// Grayscale dilation (max) / erosion (min) with a disk element.
GrayImage dilate_disk(const GrayImage& img, int radius);
GrayImage erode_disk(const GrayImage& img, int radius);

BinaryMask dilate_disk(const BinaryMask& mask, int radius);
BinaryMask erode_disk(const BinaryMask& mask, int radius);

/// 256-bin histogram equalization of an image in [0, 1].
GrayImage equalize_histogram(const GrayImage& img);

/// Decimates by an integer stride (top-left sample of each block).
GrayImage decimate(const GrayImage& img, int stride);

}  // namespace elcell::imgproc
