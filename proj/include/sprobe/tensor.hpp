#pragma once

#include <cstddef>
#include <new>
#include <span>
#include <string>
#include <vector>

namespace sprobe {

using Shape = std::vector<std::size_t>;

// 64-byte aligned storage. Vectorized kernels peel loops according to the
// buffer address, so a fixed alignment keeps results bit-reproducible.
template <class T>
struct AlignedAllocator {
    using value_type = T;
    static constexpr std::align_val_t alignment{64};

    AlignedAllocator() noexcept = default;
    template <class U>
    AlignedAllocator(const AlignedAllocator<U>&) noexcept {}

    T* allocate(std::size_t n) { return static_cast<T*>(::operator new(n * sizeof(T), alignment)); }
    void deallocate(T* p, std::size_t) noexcept { ::operator delete(p, alignment); }

    template <class U>
    bool operator==(const AlignedAllocator<U>&) const noexcept {
        return true;
    }
};

using Storage = std::vector<double, AlignedAllocator<double>>;

std::size_t shape_product(const Shape& shape);
std::string shape_string(const Shape& shape);

/// Dense row-major tensor of 64-bit floats.
class Tensor {
public:
    Tensor() = default;
    explicit Tensor(Shape shape, double fill = 0.0);
    Tensor(Shape shape, std::vector<double> data);

    const Shape& shape() const noexcept { return shape_; }
    std::size_t rank() const noexcept { return shape_.size(); }
    std::size_t dim(std::size_t axis) const { return shape_.at(axis); }
    std::size_t size() const noexcept { return data_.size(); }
    bool empty() const noexcept { return data_.empty(); }

    double* data() noexcept { return data_.data(); }
    const double* data() const noexcept { return data_.data(); }
    std::span<double> values() noexcept { return data_; }
    std::span<const double> values() const noexcept { return data_; }

    double& operator[](std::size_t i) noexcept { return data_[i]; }
    double operator[](std::size_t i) const noexcept { return data_[i]; }

    // Reinterprets the data under a new shape of equal element count.
    void reshape(Shape shape);
    Tensor reshaped(Shape shape) const;

    void fill(double value);
    bool all_finite() const noexcept;

    // Slice along the leading axis.
    std::span<double> row(std::size_t i);
    std::span<const double> row(std::size_t i) const;
    std::size_t row_size() const;

    bool operator==(const Tensor& other) const = default;

private:
    Shape shape_;
    Storage data_;
};

double sum(std::span<const double> values);
double dot(std::span<const double> a, std::span<const double> b);
double max_abs(std::span<const double> values);

}  // namespace sprobe
