// Umbrella header.
#ifndef SPI_SPI_HPP
#define SPI_SPI_HPP

#include "spi/bisim.hpp"
#include "spi/bitrace.hpp"
#include "spi/process.hpp"
#include "spi/term.hpp"
#include "spi/theory.hpp"

#endif
