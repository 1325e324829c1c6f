#ifndef SLUREJ_DEFAULT_CATALOG_HPP_
#define SLUREJ_DEFAULT_CATALOG_HPP_

#include "slurej/corpus.hpp"

namespace slurej {

/// Five smart-speaker domains with deliberately overlapping carrier phrases
/// ("play", "buy", "search for", "add ... to") so that cross-domain slot
/// values produce genuinely ambiguous requests.
inline CatalogSpec default_catalog(double confusability = 0.3,
                                   std::uint64_t seed = 7) {
  CatalogSpec c;
  c.confusability = confusability;
  c.seed = seed;

  DomainSpec music;
  music.name = "Music";
  music.prior = 0.26;
  music.intents = {"PlaySongIntent", "PlayArtistIntent", "AddToPlaylistIntent"};
  music.slot_labels = {"SongName", "ArtistName", "PlaylistName"};
  music.lexicons = {
      {"SongName",
       {"thriller", "hello", "yesterday", "imagine", "halo", "believer",
        "bad guy", "let it be", "shallow", "roar", "firework", "jolene",
        "stairway to heaven", "born in the usa", "rain on me",
        "here comes the sun", "dancing in the dark", "the sound of silence"}},
      {"ArtistName",
       {"adele", "queen", "drake", "beyonce", "coldplay", "madonna", "eminem",
        "shakira", "rihanna", "u2"}},
      {"PlaylistName",
       {"workout", "chill", "party", "road trip", "focus", "sleep"}}};
  music.templates = {
      {"PlaySongIntent",
       {"play [SongName]", "play the song [SongName]",
        "play [SongName] by [ArtistName]", "put on [SongName]"}},
      {"PlayArtistIntent",
       {"play music by [ArtistName]", "play [ArtistName]",
        "play some [ArtistName]"}},
      {"AddToPlaylistIntent",
       {"add [SongName] to [PlaylistName]", "add this song to [PlaylistName]",
        "put [SongName] on my [PlaylistName] playlist"}}};

  DomainSpec books;
  books.name = "Books";
  books.prior = 0.18;
  books.intents = {"ReadBookIntent", "FindBookIntent", "BuyBookIntent"};
  books.slot_labels = {"BookName", "AuthorName", "PageNumber"};
  books.lexicons = {
      {"BookName",
       {"the hobbit", "dune", "emma", "it", "matilda", "dracula", "ulysses",
        "beloved", "rebecca", "the shining", "frankenstein", "moana",
        "war and peace", "a tale of two cities", "the old man and the sea",
        "gone with the wind", "the lord of the rings", "a farewell to arms"}},
      {"AuthorName",
       {"tolkien", "austen", "king", "dahl", "orwell", "rowling", "herbert",
        "morrison", "shelley", "twain"}},
      {"PageNumber", {"one", "two", "ten", "twenty", "fifty", "forty two"}}};
  books.templates = {
      {"ReadBookIntent",
       {"read [BookName]", "read [BookName] from page [PageNumber]",
        "play the audiobook [BookName]", "open [BookName] at page [PageNumber]"}},
      {"FindBookIntent",
       {"find books by [AuthorName]", "search for [BookName]",
        "find [BookName] by [AuthorName]"}},
      {"BuyBookIntent",
       {"buy [BookName]", "buy the book [BookName]",
        "order [BookName] by [AuthorName]"}}};

  DomainSpec video;
  video.name = "Video";
  video.prior = 0.22;
  video.intents = {"PlayMovieIntent", "SearchVideoIntent", "ResumeShowIntent"};
  video.slot_labels = {"MovieName", "ShowName", "ActorName"};
  video.lexicons = {
      {"MovieName",
       {"frozen", "jaws", "alien", "inception", "titanic", "up", "cars",
        "heat", "rocky", "coco", "avatar", "gravity",
        "the day after tomorrow", "singing in the rain", "back to the future",
        "the man from nowhere", "a quiet place", "the girl with the dragon tattoo"}},
      {"ShowName",
       {"friends", "lost", "fargo", "the office", "succession", "dark",
        "ozark", "house"}},
      {"ActorName",
       {"tom hanks", "meryl streep", "brad pitt", "zendaya", "keanu reeves",
        "denzel washington"}}};
  video.templates = {
      {"PlayMovieIntent",
       {"play [MovieName]", "play the movie [MovieName]", "watch [MovieName]",
        "put on [MovieName]"}},
      {"SearchVideoIntent",
       {"find movies with [ActorName]", "search for [MovieName]",
        "show me [ActorName] movies"}},
      {"ResumeShowIntent",
       {"resume [ShowName]", "continue watching [ShowName]",
        "play the next episode of [ShowName]"}}};

  DomainSpec weather;
  weather.name = "Weather";
  weather.prior = 0.16;
  weather.intents = {"GetWeatherIntent", "GetForecastIntent",
                     "GetTemperatureIntent"};
  weather.slot_labels = {"City", "Date"};
  weather.lexicons = {
      {"City",
       {"boston", "seattle", "paris", "london", "tokyo", "berlin", "chicago",
        "denver", "austin", "rome"}},
      {"Date",
       {"today", "tomorrow", "tonight", "this weekend", "monday", "friday"}}};
  weather.templates = {
      {"GetWeatherIntent",
       {"what is the weather in [City]", "how is the weather in [City]",
        "weather in [City]"}},
      {"GetForecastIntent",
       {"what is the forecast for [Date]", "forecast in [City] for [Date]",
        "will it rain in [City] [Date]"}},
      {"GetTemperatureIntent",
       {"what is the temperature in [City]", "how hot is it in [City]",
        "how cold will it be [Date]"}}};

  DomainSpec shopping;
  shopping.name = "Shopping";
  shopping.prior = 0.18;
  shopping.intents = {"BuyItemIntent", "TrackOrderIntent", "AddToCartIntent"};
  shopping.slot_labels = {"ItemName", "Quantity"};
  shopping.lexicons = {
      {"ItemName",
       {"batteries", "paper towels", "coffee", "headphones", "shampoo",
        "dog food", "light bulbs", "socks", "a charger", "toothpaste",
        "a cover for my phone", "shoes for the rain", "a book light",
        "an umbrella for two"}},
      {"Quantity", {"two", "three", "ten", "a dozen", "five", "one"}}};
  shopping.templates = {
      {"BuyItemIntent",
       {"buy [ItemName]", "order [Quantity] [ItemName]",
        "buy [Quantity] [ItemName]"}},
      {"TrackOrderIntent",
       {"where is my [ItemName] order", "track my order of [ItemName]",
        "when will my [ItemName] arrive"}},
      {"AddToCartIntent",
       {"add [ItemName] to my cart", "add [Quantity] [ItemName] to cart",
        "put [ItemName] in my cart"}}};

  c.domains = {music, books, video, weather, shopping};
  return c;
}

}  // namespace slurej

#endif  // SLUREJ_DEFAULT_CATALOG_HPP_
